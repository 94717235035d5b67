//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{NodeId, ParamGrads, ParamSet, Tape};
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum tolerated relative error per parameter tensor.
    pub tolerance: f64,
    /// Denominator floor for the relative error. Entries below it are held
    /// to an absolute error of `tolerance * floor`; a loss summed over a
    /// sentence carries ~1e-9 of differencing noise at the default step.
    pub floor: f64,
    /// Check at most this many (seeded, random) entries per tensor.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-4,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences. `build` must be deterministic (no dropout).
pub fn grad_check<F>(params: &ParamSet, build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<NodeId>,
{
    let analytic = {
        let mut tape = Tape::with_params(params);
        let loss = build(&mut tape)?;
        let mut acc = params.zeros_like();
        tape.backward_into(loss, &mut acc, 1.0)?;
        acc
    };
    grad_check_against(params, build, &analytic, opts)
}

/// Same as [`grad_check`] with caller-supplied analytic gradients.
pub fn grad_check_against<F>(
    params: &ParamSet,
    build: F,
    analytic: &ParamGrads,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<NodeId>,
{
    analytic.check_matches(params)?;
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::with_params(p);
        let loss = build(&mut tape)?;
        Ok(tape.scalar(loss))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(params.len());
    for id in params.ids() {
        let n = params.get(id).numel();
        let mut entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        entries.sort_unstable();

        let mut worst = (0.0f64, 0usize);
        for &i in &entries {
            let original = params.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = original + opts.step;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = original - opts.step;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.get(id).data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > worst.0 {
                worst = (rel, i);
            }
        }
        checks.push(ParamCheck {
            name: params.name(id).to_string(),
            entries_checked: entries.len(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            passed: worst.0 <= opts.tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        params: checks,
    })
}
