use super::forward::{forward_batch, AttInput, GridShape};
use super::ModelParams;
use crate::detectors::{DetectionResult, Detector, Observation};
use crate::error::Result;
use crate::modem::{clip_llr, Constellation, SoftBits, DEFAULT_LLR_CLIP};
use crate::scalar::Scalar;

/// A trained attention detector behind the common [`Detector`] interface.
///
/// Hard decisions come from the logit signs. With score smoothing the batch
/// is cut into frames of `grid` REs; a trailing partial frame is detected
/// one RE per frame.
#[derive(Debug, Clone)]
pub struct AttDetDetector<T> {
    pub params: ModelParams<T>,
    pub label: String,
    pub llr_clip: f64,
    pub grid: Option<GridShape>,
}

impl<T: Scalar> AttDetDetector<T> {
    pub fn new(params: ModelParams<T>, label: impl Into<String>) -> Self {
        Self { params, label: label.into(), llr_clip: DEFAULT_LLR_CLIP, grid: None }
    }

    fn run(
        &self,
        obs: &[Observation<'_, T>],
        grid: Option<GridShape>,
        c: &Constellation<T>,
    ) -> Result<Vec<DetectionResult<T>>> {
        let inputs: Vec<AttInput<'_, T>> = obs.iter().map(|o| AttInput { h_est: o.h_est, y: o.y }).collect();
        let logits = forward_batch(&self.params, &inputs, grid, c.bits_per_symbol())?;
        let clip = T::lit(self.llr_clip);
        Ok(logits
            .into_iter()
            .map(|layers| {
                let soft = layers
                    .into_iter()
                    .map(|l| SoftBits { llrs: l.into_iter().map(|x| clip_llr(x, clip)).collect() })
                    .collect();
                DetectionResult::from_llrs(&self.label, soft, c)
            })
            .collect())
    }
}

impl<T: Scalar> Detector<T> for AttDetDetector<T> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn detect(&self, obs: &Observation<'_, T>, c: &Constellation<T>) -> Result<DetectionResult<T>> {
        Ok(self.run(std::slice::from_ref(obs), None, c)?.pop().expect("one result per RE"))
    }

    fn detect_batch(&self, obs: &[Observation<'_, T>], c: &Constellation<T>) -> Result<Vec<DetectionResult<T>>> {
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let grid = match self.grid {
            Some(g) if self.params.arch().score_smoothing && g.size() > 1 => g,
            _ => return self.run(obs, None, c),
        };
        let full = obs.len() / grid.size() * grid.size();
        let mut out = Vec::with_capacity(obs.len());
        if full > 0 {
            out.extend(self.run(&obs[..full], Some(grid), c)?);
        }
        if full < obs.len() {
            out.extend(self.run(&obs[full..], None, c)?);
        }
        Ok(out)
    }
}
