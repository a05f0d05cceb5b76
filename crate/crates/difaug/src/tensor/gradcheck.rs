//! Central finite-difference gradient checking.

use crate::error::Result;

use super::tape::{Tape, VarId};
use super::ParamStore;

/// Relative error between an analytic and a finite-difference derivative.
pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / f64::max(1e-8, analytic.abs() + fd.abs())
}

/// Check the gradients of a scalar-valued function of a parameter store.
///
/// `f` must rebuild the same graph on every call: it gets a fresh tape with
/// the parameters already bound (in store order) and returns the scalar loss
/// node. Returns the max relative error between the analytic gradient and the
/// central finite difference over every parameter element.
pub fn grad_check<F>(store: &mut ParamStore, f: F, fd_step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    // analytic gradients
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    tape.check_finite()?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = bound
        .iter()
        .enumerate()
        .map(|(i, v)| {
            grads
                .get(*v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; store.tensor(i).numel()])
        })
        .collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let loss = f(&mut tape, &bound)?;
        tape.check_finite()?;
        tape.value(loss).scalar_value()
    };

    let mut max_err: f64 = 0.0;
    for pi in 0..store.len() {
        for ei in 0..store.tensor(pi).numel() {
            let orig = store.tensor(pi).data()[ei];
            store.tensor_mut(pi).data_mut()[ei] = orig + fd_step;
            let plus = eval(store)?;
            store.tensor_mut(pi).data_mut()[ei] = orig - fd_step;
            let minus = eval(store)?;
            store.tensor_mut(pi).data_mut()[ei] = orig;
            let fd = (plus - minus) / (2.0 * fd_step);
            max_err = max_err.max(relative_error(analytic[pi][ei], fd));
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn l1_against_zero() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::from_vec(vec![2], vec![2.0, -3.0]).unwrap());
        let err = grad_check(
            &mut store,
            |tape, params| {
                let zero = tape.leaf(Tensor::from_vec(vec![2], vec![0.0; 2]).unwrap());
                tape.l1(params[0], zero)
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "err = {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let err = grad_check(
            &mut store,
            |tape, _| {
                let c = tape.leaf(Tensor::scalar(4.0));
                Ok(tape.sum(c))
            },
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
