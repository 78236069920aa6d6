//! Minimal neural-network stack: reverse-mode autodiff over dense arrays,
//! parameter sets, Adam, gradient clipping and a checkpoint container.

pub mod checkpoint;
pub mod optim;
pub mod params;
pub mod tape;

pub use checkpoint::{Checkpoint, Entry};
pub use optim::{clip_grad_norm, Adam};
pub use params::{xavier, xavier_scaled, ParamSet};
pub use tape::{sigmoid, softplus, Array, Tape, Var};

/// Central finite-difference check of `d loss / d params` for the listed
/// coordinates, at relative tolerance `tol`. `build` must deterministically
/// construct the scalar loss from freshly bound parameters.
#[cfg(test)]
pub(crate) fn finite_diff_check<F>(
    params: &ParamSet,
    build: F,
    coords: &[(usize, usize)],
    tol: f64,
) where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new(true);
    let vars = params.bind(&mut tape);
    let loss = build(&mut tape, &vars);
    let grads_by_node = tape.backward(loss);
    let grads = params.collect_grads(&vars, &grads_by_node);

    let eval = |p: &ParamSet| -> f64 {
        let mut t = Tape::new(false);
        let vars = p.bind(&mut t);
        let loss = build(&mut t, &vars);
        t.value(loss).data[0]
    };

    for &(entry, k) in coords {
        let x = params.entry(entry).1.data[k];
        let eps = 1e-5 * x.abs().max(1.0);
        let mut plus = params.clone();
        plus.entry_mut(entry).data[k] = x + eps;
        let mut minus = params.clone();
        minus.entry_mut(entry).data[k] = x - eps;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        let analytic = grads[entry].data[k];
        let denom = analytic.abs().max(numeric.abs()).max(1e-3);
        let rel = (analytic - numeric).abs() / denom;
        assert!(
            rel < tol,
            "coordinate ({entry},{k}): analytic {analytic} vs numeric {numeric} (rel {rel})"
        );
    }
}
