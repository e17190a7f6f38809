//! Central finite-difference checks against tape gradients.
//!
//! The relative error of an analytic/numeric pair is
//! `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
//! from turning rounding noise into huge ratios.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub floor: f64,
    /// Coordinates probed per tensor; larger tensors are probed at evenly
    /// spaced positions.
    pub max_coords: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-4,
            max_coords: 64,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (tensor label, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, label: &str, idx: usize, analytic: f64, numeric: f64, floor: f64) {
        let err = relative_error(analytic, numeric, floor);
        self.checked += 1;
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some((label.to_string(), idx, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn probe_positions(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * len / max).collect()
    }
}

impl GradCheck {
    /// Checks d(loss)/d(param) for each listed parameter (all if `ids` is empty).
    pub fn check_params<F>(
        &self,
        store: &mut ParamStore,
        ids: &[ParamId],
        loss_fn: F,
    ) -> Result<GradCheckReport>
    where
        F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
    {
        let ids: Vec<ParamId> = if ids.is_empty() {
            store.ids().collect()
        } else {
            ids.to_vec()
        };
        let eval = |store: &ParamStore| -> Result<f64> {
            let tape = Tape::new();
            Ok(loss_fn(&tape, store)?.item())
        };

        store.zero_grad();
        {
            let tape = Tape::new();
            let loss = loss_fn(&tape, store)?;
            tape.backward(loss, store)?;
        }

        let mut report = GradCheckReport::default();
        for id in ids {
            let label = store.name(id).to_string();
            let analytic = store.get(id).grad().map(<[f64]>::to_vec).unwrap_or_default();
            for pos in probe_positions(store.get(id).len(), self.max_coords) {
                let orig = store.get(id).data()[pos];
                store.get_mut(id).data_mut()[pos] = orig + self.step;
                let plus = eval(store)?;
                store.get_mut(id).data_mut()[pos] = orig - self.step;
                let minus = eval(store)?;
                store.get_mut(id).data_mut()[pos] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                let a = analytic.get(pos).copied().unwrap_or(0.0);
                report.record(&label, pos, a, numeric, self.floor);
            }
        }
        store.zero_grad();
        Ok(report)
    }

    /// Checks d(loss)/d(input) for free input tensors.
    pub fn check_inputs<F>(&self, inputs: &[Tensor], loss_fn: F) -> Result<GradCheckReport>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        let eval = |inputs: &[Tensor]| -> Result<f64> {
            let tape = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            Ok(loss_fn(&tape, &vars)?.item())
        };

        let tape = Tape::new();
        let vars: Vec<_> = inputs
            .iter()
            .map(|t| tape.leaf(t.detached().with_grad()))
            .collect();
        let loss = loss_fn(&tape, &vars)?;
        tape.backward_inputs(loss)?;

        let mut report = GradCheckReport::default();
        let mut work: Vec<Tensor> = inputs.iter().map(Tensor::detached).collect();
        for (i, var) in vars.iter().enumerate() {
            let analytic = tape
                .grad(*var)
                .map(Tensor::into_data)
                .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
            let label = format!("input{i}");
            for pos in probe_positions(inputs[i].len(), self.max_coords) {
                let orig = work[i].data()[pos];
                work[i].data_mut()[pos] = orig + self.step;
                let plus = eval(&work)?;
                work[i].data_mut()[pos] = orig - self.step;
                let minus = eval(&work)?;
                work[i].data_mut()[pos] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                report.record(&label, pos, analytic[pos], numeric, self.floor);
            }
        }
        Ok(report)
    }
}
