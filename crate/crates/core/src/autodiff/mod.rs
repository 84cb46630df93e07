//! Reverse-mode differentiation over row-major f64 matrices.

mod adam;
pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::ParamSet;
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn matmul_by_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(1, 2, vec![1.0, 2.0]).unwrap();
        let i = tape.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0]);
        assert_eq!(tape.shape(c), [1, 2]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::matrix(1, 1, vec![0.0]).unwrap()).unwrap();
        let s = tape.sigmoid(w);
        assert_eq!(tape.scalar(s), 0.5);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap(), &[0.25]);
    }

    #[test]
    fn self_distance_is_zero_with_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(&Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap()).unwrap();
        let l = tape.mse(a, a).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        assert!(tape.backward(l).unwrap().get(a).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let sq = tape.mul(w, w).unwrap();
        let l = tape.sum(sq);
        assert_eq!(tape.backward(l).unwrap().get(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(2, 3, vec![0.0; 6]).unwrap();
        let b = tape.constant(2, 3, vec![0.0; 6]).unwrap();
        match tape.matmul(a, b) {
            Err(Error::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!((lhs, rhs), (vec![2, 3], vec![2, 3]));
            }
            other => panic!("{other:?}"),
        }
        assert!(tape.add(a, b).is_ok());
        let c = tape.constant(3, 2, vec![0.0; 6]).unwrap();
        assert!(tape.mul(a, c).is_err());
        assert!(tape.slice(a, Axis::Cols, 2, 4).is_err());
        assert!(tape.concat(&[a, c], Axis::Rows).is_err());
    }

    #[test]
    fn disconnected_parameter_is_reported() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let unused = tape.param(&Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let l = tape.sum(w);
        let g = tape.backward(l).unwrap();
        assert!(g.get(w).is_ok());
        assert!(matches!(g.get(unused), Err(Error::DisconnectedGraph(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        let c = tape.constant(1, 2, vec![3.0, 4.0]).unwrap();
        let p = tape.mul(w, c).unwrap();
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap(), &[3.0, 4.0]);
        assert!(g.get(c).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::matrix(1, 2, vec![0.5, -1.0]).unwrap());
        let mut state = AdamState::new(&params);
        state.m[0] = vec![1.0, 2.0];
        state.v[0] = vec![4.0, 4.0];
        state.step = 3;
        let before = params.clone();
        params.tensors_mut()[0].grad = Some(vec![0.0, 0.0]);
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        adam_step(&mut params, &mut state, &cfg);
        assert_eq!(params.tensors()[0].data(), before.tensors()[0].data());
        assert!((state.m[0][0] - 0.9).abs() < 1e-15 && (state.v[0][1] - 4.0 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // From m = v = 0 the bias-corrected first step is -lr g / (|g| + eps).
        for g in [0.3, -2.0, 1e-3] {
            let mut params = ParamSet::new();
            params.insert("w", Tensor::matrix(1, 1, vec![1.0]).unwrap());
            params.tensors_mut()[0].grad = Some(vec![g]);
            let mut state = AdamState::new(&params);
            let cfg = AdamConfig::default();
            adam_step(&mut params, &mut state, &cfg);
            let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((params.tensors()[0].data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_descends_convex_quadratic() {
        let target = [3.0, -1.0, 0.5];
        let mut params = ParamSet::new();
        params.insert("w", Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        let mut losses = vec![];
        for _ in 0..200 {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape).unwrap();
            let t = tape.constant(1, 3, target.to_vec()).unwrap();
            let l = tape.mse(vars[0], t).unwrap();
            losses.push(tape.scalar(l));
            let g = tape.backward(l).unwrap();
            params.collect_grads(&g, &vars).unwrap();
            adam_step(&mut params, &mut state, &cfg);
        }
        // Past the first few steps, each step lowers the loss.
        assert!(losses[10..50].windows(2).all(|w| w[1] < w[0]), "{:?}", &losses[..50]);
        assert!(losses[199] < 1e-2 * losses[0]);
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let mut params = ParamSet::new();
        params.insert("a.w", Tensor::matrix(2, 3, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, 1e300]).unwrap());
        params.insert("bias", Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let mut buf = Vec::new();
        checkpoint::write_params(&mut buf, &params).unwrap();
        assert_eq!(&buf[..8], checkpoint::MAGIC);
        let back = checkpoint::read_params(&mut buf.as_slice()).unwrap();
        assert_eq!(back, params);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(checkpoint::read_params(&mut bad.as_slice()), Err(Error::Checkpoint(_))));
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(checkpoint::read_params(&mut &truncated[..]), Err(Error::Checkpoint(_))));
        let mut version = buf.clone();
        version[8] = 9;
        assert!(matches!(checkpoint::read_params(&mut version.as_slice()), Err(Error::Checkpoint(_))));
    }
}
