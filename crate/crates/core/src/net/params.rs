//! Traits shared by every trainable model in the crate.

/// A model whose trainable parameters can be viewed as a list of flat tensors.
///
/// Gradients use the same type as the parameters, so `tensors()` of a gradient
/// lines up entry for entry with `tensors()` of the model.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn set_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// A copy with every trainable entry zeroed; used as a gradient buffer.
    fn zeroed(&self) -> Self {
        let mut z = self.clone();
        z.set_zero();
        z
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// `self += scale · other`.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// A building block `F: R^d -> R^d` with a reverse-mode pass.
pub trait Block: ParamSet {
    type Cache;

    fn dim(&self) -> usize;
    fn new_cache(&self) -> Self::Cache;

    /// Evaluates `F(x)` into `out`, keeping what the backward pass needs in `cache`.
    fn forward(&self, x: &[f64], cache: &mut Self::Cache, out: &mut [f64]);

    /// Given `g = dL/dF` for the input cached by the last `forward`, adds the
    /// parameter gradient into `grad` and overwrites `dx` with `dL/dx`.
    fn backward(&self, cache: &mut Self::Cache, g: &[f64], grad: &mut Self, dx: &mut [f64]);
}

/// A one-step predictor that can be fitted by the trainer.
pub trait Trainable: ParamSet {
    type Tape;

    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn new_tape(&self) -> Self::Tape;

    fn forward_tape<'t>(&self, x: &[f64], tape: &'t mut Self::Tape) -> &'t [f64];

    /// Backpropagates `g_out = dL/d(output)` of the last `forward_tape` call.
    fn backward_tape(&self, tape: &mut Self::Tape, g_out: &[f64], grad: &mut Self, dx: &mut [f64]);

    /// Per-output scales the training error is divided by, when the model
    /// works in standardized coordinates.
    fn loss_scale(&self) -> Option<&[f64]> {
        None
    }
}
