//! Central-finite-difference verification of tape gradients.
//!
//! Every differentiable quantity under test (inputs and parameters alike) is an
//! entry of a `ParamStore<f64>`. The scalar being differentiated is
//! `sum(output ⊙ R)` for a fixed random projection `R`, which exercises every
//! output element with a distinct weight.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::graph::Graph;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Something differentiable to check: it draws its own random entries and
/// builds its output on a tape that reads those entries through `param`.
pub trait GradOp {
    fn name(&self) -> String;

    fn setup(&self, rng: &mut ChaCha8Rng) -> ParamStore<f64>;

    fn forward(&self, tape: &mut Tape<'_, f64>) -> Result<Var>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sample {
    /// Up to this many random elements from each entry.
    PerEntry(usize),
    /// This many (entry, element) pairs drawn uniformly over all elements.
    Total(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub sample: Sample,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-3,
            rel_tol: 1e-4,
            abs_floor: 1e-6,
            sample: Sample::PerEntry(24),
        }
    }
}

impl GradcheckConfig {
    /// `|a - n| / max(|a|, |n|, abs_floor / rel_tol)`; at most `rel_tol` exactly
    /// when the difference is within `rel_tol` relative or `abs_floor` absolute.
    pub fn rel_error(&self, analytic: f64, numeric: f64) -> f64 {
        let scale = analytic
            .abs()
            .max(numeric.abs())
            .max(self.abs_floor / self.rel_tol);
        (analytic - numeric).abs() / scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryReport {
    pub name: String,
    pub checked: usize,
    /// Elements that only passed after retrying with a step 100× smaller,
    /// i.e. a ReLU kink or max-pool near-tie fell inside the first stencil.
    pub refined: usize,
    pub worst_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub op: String,
    pub entries: Vec<EntryReport>,
    pub rel_tol: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.worst_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.worst_rel_error <= self.rel_tol)
    }

    fn merge(&mut self, other: GradcheckReport) {
        for e in other.entries {
            match self.entries.iter_mut().find(|x| x.name == e.name) {
                Some(x) => {
                    x.checked += e.checked;
                    x.refined += e.refined;
                    x.worst_rel_error = x.worst_rel_error.max(e.worst_rel_error);
                }
                None => self.entries.push(e),
            }
        }
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(f, "{status} {:<28} worst {:.6e}", self.op, self.worst())?;
        for e in &self.entries {
            write!(
                f,
                "    {:<40} n={:<4} {:.6e}",
                e.name, e.checked, e.worst_rel_error
            )?;
            if e.refined > 0 {
                write!(f, " (refined {})", e.refined)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn projected_loss(op: &dyn GradOp, store: &ParamStore<f64>, proj: &Tensor<f64>) -> Result<f64> {
    let mut tape = Tape::with_params(store);
    let out = op.forward(&mut tape)?;
    tape.value(&out)
        .zip_map(proj, |a, b| a * b)
        .map(|t| t.sum())
}

/// Tape gradients of `sum(output ⊙ proj)` for every entry.
pub fn analytic_gradients(
    op: &dyn GradOp,
    store: &ParamStore<f64>,
    proj: &Tensor<f64>,
) -> Result<BTreeMap<String, Tensor<f64>>> {
    let mut tape = Tape::with_params(store);
    let out = op.forward(&mut tape)?;
    let r = tape.constant(proj.clone());
    let weighted = tape.hadamard(&out, &r)?;
    let loss = tape.sum(&weighted);
    let grads = tape.backward(loss)?;
    Ok(grads
        .params()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect())
}

fn selection(
    store: &ParamStore<f64>,
    sample_mode: Sample,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, usize)> {
    match sample_mode {
        Sample::PerEntry(k) => store
            .iter()
            .flat_map(|(name, t)| {
                let picks: Vec<usize> = if t.len() <= k {
                    (0..t.len()).collect()
                } else {
                    let mut v = sample(rng, t.len(), k).into_vec();
                    v.sort_unstable();
                    v
                };
                picks.into_iter().map(move |i| (name.to_string(), i))
            })
            .collect(),
        Sample::Total(k) => {
            let flat: Vec<(String, usize)> = store
                .iter()
                .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.to_string(), i)))
                .collect();
            let k = k.min(flat.len());
            let mut idx = sample(rng, flat.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| flat[i].clone()).collect()
        }
    }
}

/// Compare supplied analytic gradients against central differences on the
/// selected elements. An element that fails at `cfg.step` is measured again
/// at `cfg.step / 100` and keeps the smaller error; a wrong gradient fails at
/// both steps, while a kink close to the evaluation point only spoils the wider one.
pub fn check_gradients(
    op: &dyn GradOp,
    store: &ParamStore<f64>,
    proj: &Tensor<f64>,
    analytic: &BTreeMap<String, Tensor<f64>>,
    cfg: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GradcheckReport> {
    let mut entries: Vec<EntryReport> = Vec::new();
    for (name, idx) in selection(store, cfg.sample, rng) {
        let base = store.require(&name)?;
        let bump = |delta: f64| -> Result<f64> {
            let mut data = base.data().to_vec();
            data[idx] += delta;
            let moved = store.with_replaced(&name, Tensor::new(base.dims(), data)?)?;
            projected_loss(op, &moved, proj)
        };
        let numeric = |h: f64| -> Result<f64> { Ok((bump(h)? - bump(-h)?) / (2.0 * h)) };
        let a = analytic.get(&name).map_or(0.0, |g| g.data()[idx]);
        let mut err = cfg.rel_error(a, numeric(cfg.step)?);
        let mut refined = 0;
        if err > cfg.rel_tol {
            let fine = cfg.rel_error(a, numeric(cfg.step * 1e-2)?);
            if fine <= cfg.rel_tol {
                err = fine;
                refined = 1;
            }
        }
        match entries.iter_mut().find(|e| e.name == name) {
            Some(e) => {
                e.checked += 1;
                e.refined += refined;
                e.worst_rel_error = e.worst_rel_error.max(err);
            }
            None => entries.push(EntryReport {
                name,
                checked: 1,
                refined,
                worst_rel_error: err,
            }),
        }
    }
    Ok(GradcheckReport {
        op: op.name(),
        entries,
        rel_tol: cfg.rel_tol,
    })
}

/// Draw the trial's entries and projection, returning both.
pub fn trial_setup(
    op: &dyn GradOp,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamStore<f64>, Tensor<f64>)> {
    let store = op.setup(rng);
    let mut tape = Tape::with_params(&store);
    let out = op.forward(&mut tape)?;
    let dims = tape.dims(&out);
    let proj = Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0));
    Ok((store, proj))
}

pub fn gradcheck(op: &dyn GradOp, trials: usize, seed: u64) -> Result<GradcheckReport> {
    gradcheck_with(op, trials, seed, &GradcheckConfig::default())
}

pub fn gradcheck_with(
    op: &dyn GradOp,
    trials: usize,
    seed: u64,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        op: op.name(),
        entries: Vec::new(),
        rel_tol: cfg.rel_tol,
    };
    for trial in 0..trials.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(trial as u64),
        );
        let (store, proj) = trial_setup(op, &mut rng)?;
        let analytic = analytic_gradients(op, &store, &proj)?;
        report.merge(check_gradients(
            op, &store, &proj, &analytic, cfg, &mut rng,
        )?);
    }
    Ok(report)
}

/// Uniform tensor in `[lo, hi)`, optionally pushed away from zero by `gap`
/// (keeps ReLU-like kinks out of the finite-difference stencil).
pub fn random_tensor(
    rng: &mut ChaCha8Rng,
    dims: [usize; 4],
    lo: f64,
    hi: f64,
    gap: f64,
) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let v: f64 = rng.random_range(lo..hi);
        if gap > 0.0 && v.abs() < gap {
            if v < 0.0 {
                v - gap
            } else {
                v + gap
            }
        } else {
            v
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::ConvSpec;

    struct Depthwise5;

    impl GradOp for Depthwise5 {
        fn name(&self) -> String {
            "depthwise 5x5".into()
        }

        fn setup(&self, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
            ParamStore::from_entries([
                (
                    "x".to_string(),
                    random_tensor(rng, [1, 3, 6, 7], -1.0, 1.0, 0.0),
                ),
                (
                    "w".to_string(),
                    random_tensor(rng, [3, 1, 5, 5], -1.0, 1.0, 0.0),
                ),
                (
                    "b".to_string(),
                    random_tensor(rng, [1, 3, 1, 1], -1.0, 1.0, 0.0),
                ),
            ])
            .unwrap()
        }

        fn forward(&self, tape: &mut Tape<'_, f64>) -> Result<Var> {
            let x = tape.param("x")?;
            let w = tape.param("w")?;
            let b = tape.param("b")?;
            tape.conv2d(
                &x,
                &w,
                Some(&b),
                &ConvSpec::same(5, 5).with_groups(3).with_bias(true),
            )
        }
    }

    #[test]
    fn depthwise_passes() {
        let r = gradcheck(&Depthwise5, 2, 1).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.entries.len(), 3);
    }

    #[test]
    fn negated_vjp_fails_near_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (store, proj) = trial_setup(&Depthwise5, &mut rng).unwrap();
        let negated = analytic_gradients(&Depthwise5, &store, &proj)
            .unwrap()
            .into_iter()
            .map(|(k, v)| (k, v.map(|g| -g)))
            .collect();
        let cfg = GradcheckConfig::default();
        let r = check_gradients(&Depthwise5, &store, &proj, &negated, &cfg, &mut rng).unwrap();
        assert!(!r.passed());
        assert!((r.worst() - 2.0).abs() < 1e-3, "worst {}", r.worst());
    }

    #[test]
    fn rel_error_floor() {
        let cfg = GradcheckConfig::default();
        assert!(cfg.rel_error(1e-9, 5e-7) <= cfg.rel_tol);
        assert!(cfg.rel_error(1.0, 1.0 + 5e-5) <= cfg.rel_tol);
        assert!(cfg.rel_error(1.0, 1.001) > cfg.rel_tol);
        assert_eq!(cfg.rel_error(2.0, -2.0), 2.0);
    }

    #[test]
    fn total_sampling_draws_exact_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let store = Depthwise5.setup(&mut rng);
        let picks = selection(&store, Sample::Total(20), &mut rng);
        assert_eq!(picks.len(), 20);
    }
}
