//! Central finite-difference checks for tape gradients.

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Compares the tape gradient of `f` with central differences of step `h`
/// for every input, returning the relative error per input.
///
/// `f` receives the input vars in order and must return a scalar.
pub fn gradcheck<F>(inputs: &[Tensor], h: f32, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone(), false)).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.value(out).item() as f64)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut errs = Vec::with_capacity(inputs.len());
    let mut vals = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = tape.grad_or_zero(v).data().iter().map(|&g| g as f64).collect();
        let mut numeric = vec![0.0f64; inputs[k].numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].data()[i];
            vals[k].data_mut()[i] = orig + h;
            let fp = eval(&vals)?;
            vals[k].data_mut()[i] = orig - h;
            let fm = eval(&vals)?;
            vals[k].data_mut()[i] = orig;
            *slot = (fp - fm) / (2.0 * h as f64);
        }
        errs.push(relative_error(&analytic, &numeric, 1e-3));
    }
    Ok(errs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Reduces an arbitrary tensor to a scalar with fixed pseudo-random weights.
    fn probe(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let w = rand_t(&mut rng, t.value(y).shape());
        t.weighted_sum(y, &w)
    }

    fn check(seed: u64, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
        let errs = gradcheck(&inputs, 1e-3, |t, v| {
            let y = f(t, v)?;
            probe(t, y, seed)
        })
        .unwrap();
        for (k, e) in errs.iter().enumerate() {
            assert!(*e < 1e-2, "seed {seed} input {k}: rel err {e}");
        }
    }

    #[test]
    fn conv_gelu_toy() {
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![
                rand_t(&mut r, &[1, 2, 5, 5]),
                rand_t(&mut r, &[3, 2, 3, 3]),
                rand_t(&mut r, &[3]),
                rand_t(&mut r, &[2, 3, 1, 1]),
            ];
            check(seed, ins, |t, v| {
                let a = t.conv2d(v[0], v[1], Some(v[2]), 1, 1, 1)?;
                let a = t.gelu(a);
                t.conv2d(a, v[3], None, 1, 0, 1)
            });
        }
    }

    #[test]
    fn attention_pieces() {
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
            let ins = vec![
                rand_t(&mut r, &[2, 4, 3]),
                rand_t(&mut r, &[2, 4, 3]),
                rand_t(&mut r, &[2, 4, 3]),
                rand_t(&mut r, &[4, 4]),
            ];
            check(seed, ins, |t, v| {
                let s = t.bmm(v[0], v[1], false, true)?;
                let s = t.add_bcast(s, v[3])?;
                let p = t.softmax_last(s)?;
                t.bmm(p, v[2], false, false)
            });
        }
    }

    #[test]
    fn transposed_bmm_variants() {
        for (ta, tb) in [(true, false), (true, true), (false, false)] {
            let mut r = ChaCha8Rng::seed_from_u64(7);
            let a = if ta { rand_t(&mut r, &[2, 3, 4]) } else { rand_t(&mut r, &[2, 4, 3]) };
            let b = if tb { rand_t(&mut r, &[2, 5, 3]) } else { rand_t(&mut r, &[2, 3, 5]) };
            check(7, vec![a, b], move |t, v| t.bmm(v[0], v[1], ta, tb));
        }
    }
}
