//! Closed-form Gaussian denoiser used as a test oracle.

use crate::condition::Condition;
use crate::denoiser::{Denoiser, KeyFeatures};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::{patchify, Tensor};
use crate::video::Video;

/// Per-condition isotropic Gaussian data: class means plus one shared
/// standard deviation. For this world the optimal noise predictor has a
/// closed form, which makes it an exact oracle for the distillation math.
#[derive(Clone, Debug)]
pub struct GaussianWorld {
    means: Vec<(String, Video)>,
    sigma: f32,
}

impl GaussianWorld {
    pub fn new(sigma: f32) -> Result<Self> {
        if sigma < 0.0 {
            return Err(CoreError::invalid("GaussianWorld::new", "sigma must be >= 0"));
        }
        Ok(GaussianWorld { means: Vec::new(), sigma })
    }

    /// Registers the mean video for a condition id. The empty id stands for
    /// the null condition.
    pub fn insert(&mut self, id: impl Into<String>, mu: Video) -> Result<()> {
        let id = id.into();
        if let Some(first) = self.means.first() {
            if !first.1.same_geometry(&mu) {
                return Err(CoreError::shapes(
                    "GaussianWorld::insert",
                    first.1.tensor().shape(),
                    mu.tensor().shape(),
                ));
            }
        }
        match self.means.iter_mut().find(|(k, _)| *k == id) {
            Some(slot) => slot.1 = mu,
            None => self.means.push((id, mu)),
        }
        Ok(())
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }

    pub fn mean(&self, y: &Condition) -> Result<&Video> {
        self.means
            .iter()
            .find(|(k, _)| k == y.id())
            .map(|(_, v)| v)
            .ok_or_else(|| {
                let label = if y.is_null() { "<null>".to_string() } else { y.id().to_string() };
                CoreError::UnknownCondition(label)
            })
    }
}

/// Optimal epsilon prediction for `GaussianWorld` data: with marginal
/// N(sqrt(ab) mu, (ab sigma^2 + 1 - ab) I) at timestep t,
/// eps* = sqrt(1-ab) (x_t - sqrt(ab) mu) / (ab sigma^2 + 1 - ab).
pub fn analytic_eps(
    world: &GaussianWorld,
    x_t: &Video,
    t: usize,
    y: &Condition,
    sched: &NoiseSchedule,
) -> Result<Video> {
    let mu = world.mean(y)?;
    if !mu.same_geometry(x_t) {
        return Err(CoreError::shapes("analytic_eps", mu.tensor().shape(), x_t.tensor().shape()));
    }
    let ab = sched.alpha_bar(t)?;
    let var = ab * world.sigma * world.sigma + (1.0 - ab);
    let coef = (1.0 - ab).sqrt() / var;
    let sqrt_ab = ab.sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(mu.data())
        .map(|(x, m)| coef * (x - sqrt_ab * m))
        .collect();
    Video::new(x_t.frames(), x_t.channels(), x_t.height(), x_t.width(), data)
}

/// Fixed linear projection applied to patch tokens; the analytic denoiser's
/// deterministic, differentiable key tap.
#[derive(Clone, Debug)]
pub struct PatchProjector {
    patch: usize,
    weights: Tensor,
}

impl PatchProjector {
    pub fn new(patch: usize, weights: Tensor) -> Result<Self> {
        if patch == 0 || weights.rank() != 2 {
            return Err(CoreError::invalid(
                "PatchProjector::new",
                format!("patch {} with weight shape {:?}", patch, weights.shape()),
            ));
        }
        Ok(PatchProjector { patch, weights })
    }

    /// Identity projection: tokens pass through verbatim.
    pub fn identity(patch: usize, channels: usize) -> Self {
        let dim = channels * patch * patch;
        PatchProjector { patch, weights: Tensor::eye(dim) }
    }

    /// Seeded random projection into `out_channels` features.
    pub fn random(patch: usize, channels: usize, out_channels: usize, seed: u64) -> Self {
        let dim = channels * patch * patch;
        let mut r = rng::seeded(seed);
        let w = rng::normal_tensor(&mut r, &[dim, out_channels]).scale(1.0 / (dim as f32).sqrt());
        PatchProjector { patch, weights: w }
    }

    pub fn patch(&self) -> usize {
        self.patch
    }
}

/// Tokenizes `x_t` into patches and applies the fixed projection.
pub fn analytic_keys(x_t: &Video, proj: &PatchProjector) -> Result<KeyFeatures> {
    let tokens = patchify(x_t.tensor(), proj.patch)?;
    let keys = tokens.linear(&proj.weights)?;
    KeyFeatures::new(keys)
}

/// [`GaussianWorld`] bundled with a key projector, usable anywhere a
/// denoiser is expected.
#[derive(Clone, Debug)]
pub struct AnalyticDenoiser {
    world: GaussianWorld,
    projector: PatchProjector,
}

impl AnalyticDenoiser {
    pub fn new(world: GaussianWorld, projector: PatchProjector) -> Self {
        AnalyticDenoiser { world, projector }
    }

    pub fn world(&self) -> &GaussianWorld {
        &self.world
    }

    pub fn projector(&self) -> &PatchProjector {
        &self.projector
    }
}

impl Denoiser for AnalyticDenoiser {
    fn predict_eps(&self, x_t: &Video, t: usize, y: &Condition, sched: &NoiseSchedule) -> Result<Video> {
        analytic_eps(&self.world, x_t, t, y, sched)
    }

    fn extract_keys(&self, x_t: &Video, _t: usize, _y: &Condition, _sched: &NoiseSchedule) -> Result<KeyFeatures> {
        analytic_keys(x_t, &self.projector)
    }

    fn extract_keys_var(
        &self,
        g: &mut Graph,
        x_t: Var,
        _t: usize,
        _y: &Condition,
        _sched: &NoiseSchedule,
    ) -> Result<Var> {
        let w = g.constant(self.projector.weights.clone());
        let tokens = g.patchify(x_t, self.projector.patch)?;
        g.linear(tokens, w)
    }

    fn differentiable(&self) -> bool {
        true
    }
}
