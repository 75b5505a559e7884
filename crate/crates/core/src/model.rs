//! Forward and backward passes of the affinity head.
//!
//! A drug embedding and a protein embedding are each projected into a shared
//! space. The projected protein produces a per-feature scale `gamma` and shift
//! `beta` that modulate the projected drug. The modulated drug and the
//! projected protein are L2-normalized, their cosine distance is expanded into
//! Gaussian radial basis features, and a linear head maps those features to a
//! prediction (an affinity in regression mode, a logit in classification
//! mode).
//!
//! Gradients are derived by hand for exactly this architecture. [`backward`]
//! takes two upstream sensitivities, one for the prediction and one for the
//! distance, so the same routine serves the regression/classification term and
//! the triplet term.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Affine map `y = W x + b` with a row-major `out_dim × in_dim` weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            out_dim,
            in_dim,
            weight: vec![T::zero(); out_dim * in_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.in_dim {
            return Err(Error::dim("affine input", self.in_dim, x.len()));
        }
        Ok(self
            .weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| dot(row, x) + b)
            .collect())
    }

    /// Accumulates `dL/dW += g ⊗ x` and `dL/db += g` into `self`.
    fn accumulate_outer(&mut self, g_out: &[T], x: &[T]) {
        for ((row, b), &g) in self
            .weight
            .chunks_exact_mut(self.in_dim)
            .zip(self.bias.iter_mut())
            .zip(g_out)
        {
            *b = *b + g;
            if g == T::zero() {
                continue;
            }
            for (w, &xi) in row.iter_mut().zip(x) {
                *w = *w + g * xi;
            }
        }
    }

    /// Adds `Wᵀ g` into `g_in`.
    fn backprop_input(&self, g_out: &[T], g_in: &mut [T]) {
        for (row, &g) in self.weight.chunks_exact(self.in_dim).zip(g_out) {
            if g == T::zero() {
                continue;
            }
            for (acc, &w) in g_in.iter_mut().zip(row) {
                *acc = *acc + g * w;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn cast<U: Scalar>(&self) -> Affine<U> {
        Affine {
            out_dim: self.out_dim,
            in_dim: self.in_dim,
            weight: crate::scalar::convert_slice(&self.weight),
            bias: crate::scalar::convert_slice(&self.bias),
        }
    }
}

/// How the FiLM layer participates in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FilmMode {
    #[default]
    Learned,
    /// `gamma ≡ 1`, `beta ≡ 0`: the conditioned drug vector is the projected
    /// drug vector itself.
    Identity,
}

/// Zero-norm handling in the L2 normalization before the distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormGuard {
    /// Zero-norm vectors are a [`Error::DegenerateInput`].
    Strict,
    /// Norms are floored at the given value; the floor is treated as a
    /// constant in the backward pass.
    Floor(f64),
}

impl Default for NormGuard {
    fn default() -> Self {
        NormGuard::Floor(1e-12)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    pub film: FilmMode,
    pub guard: NormGuard,
}

/// Shapes and fixed hyperparameters of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelShape {
    pub d_drug: usize,
    pub d_prot: usize,
    pub d_shared: usize,
    pub k: usize,
    pub sigma: f64,
}

/// Identifies one trainable tensor of [`ModelParams`] / [`Gradients`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamTensor {
    ProjDrugWeight,
    ProjDrugBias,
    ProjProtWeight,
    ProjProtBias,
    GammaWeight,
    GammaBias,
    BetaWeight,
    BetaBias,
    HeadWeight,
    HeadBias,
}

impl ParamTensor {
    pub const ALL: [ParamTensor; 10] = [
        ParamTensor::ProjDrugWeight,
        ParamTensor::ProjDrugBias,
        ParamTensor::ProjProtWeight,
        ParamTensor::ProjProtBias,
        ParamTensor::GammaWeight,
        ParamTensor::GammaBias,
        ParamTensor::BetaWeight,
        ParamTensor::BetaBias,
        ParamTensor::HeadWeight,
        ParamTensor::HeadBias,
    ];

    /// Weight matrices (and the head weight row) receive decoupled weight
    /// decay; biases do not.
    pub fn decayed(self) -> bool {
        matches!(
            self,
            ParamTensor::ProjDrugWeight
                | ParamTensor::ProjProtWeight
                | ParamTensor::GammaWeight
                | ParamTensor::BetaWeight
                | ParamTensor::HeadWeight
        )
    }

    pub fn is_film(self) -> bool {
        matches!(
            self,
            ParamTensor::GammaWeight
                | ParamTensor::GammaBias
                | ParamTensor::BetaWeight
                | ParamTensor::BetaBias
        )
    }

    /// Tensors that receive gradient under the given FiLM mode.
    pub fn trainable(film: FilmMode) -> impl Iterator<Item = ParamTensor> {
        ParamTensor::ALL
            .into_iter()
            .filter(move |t| film == FilmMode::Learned || !t.is_film())
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamTensor::ProjDrugWeight => "proj_drug.weight",
            ParamTensor::ProjDrugBias => "proj_drug.bias",
            ParamTensor::ProjProtWeight => "proj_prot.weight",
            ParamTensor::ProjProtBias => "proj_prot.bias",
            ParamTensor::GammaWeight => "film_gamma.weight",
            ParamTensor::GammaBias => "film_gamma.bias",
            ParamTensor::BetaWeight => "film_beta.weight",
            ParamTensor::BetaBias => "film_beta.bias",
            ParamTensor::HeadWeight => "head.weight",
            ParamTensor::HeadBias => "head.bias",
        }
    }
}

macro_rules! tensor_accessors {
    () => {
        pub fn tensor(&self, t: ParamTensor) -> &[T] {
            match t {
                ParamTensor::ProjDrugWeight => &self.proj_drug.weight,
                ParamTensor::ProjDrugBias => &self.proj_drug.bias,
                ParamTensor::ProjProtWeight => &self.proj_prot.weight,
                ParamTensor::ProjProtBias => &self.proj_prot.bias,
                ParamTensor::GammaWeight => &self.film_gamma.weight,
                ParamTensor::GammaBias => &self.film_gamma.bias,
                ParamTensor::BetaWeight => &self.film_beta.weight,
                ParamTensor::BetaBias => &self.film_beta.bias,
                ParamTensor::HeadWeight => &self.head_w,
                ParamTensor::HeadBias => std::slice::from_ref(&self.head_b),
            }
        }

        pub fn tensor_mut(&mut self, t: ParamTensor) -> &mut [T] {
            match t {
                ParamTensor::ProjDrugWeight => &mut self.proj_drug.weight,
                ParamTensor::ProjDrugBias => &mut self.proj_drug.bias,
                ParamTensor::ProjProtWeight => &mut self.proj_prot.weight,
                ParamTensor::ProjProtBias => &mut self.proj_prot.bias,
                ParamTensor::GammaWeight => &mut self.film_gamma.weight,
                ParamTensor::GammaBias => &mut self.film_gamma.bias,
                ParamTensor::BetaWeight => &mut self.film_beta.weight,
                ParamTensor::BetaBias => &mut self.film_beta.bias,
                ParamTensor::HeadWeight => &mut self.head_w,
                ParamTensor::HeadBias => std::slice::from_mut(&mut self.head_b),
            }
        }
    };
}

/// All parameters of the head.
///
/// `rbf_centers` and `rbf_sigma` are fixed hyperparameters stored alongside
/// the weights; they never receive gradient or optimizer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub proj_drug: Affine<T>,
    pub proj_prot: Affine<T>,
    pub film_gamma: Affine<T>,
    pub film_beta: Affine<T>,
    pub rbf_centers: Vec<T>,
    pub rbf_sigma: T,
    pub head_w: Vec<T>,
    pub head_b: T,
}

impl<T: Scalar> ModelParams<T> {
    tensor_accessors!();

    /// Fresh parameters.
    ///
    /// Projector weights and biases are drawn from `U(-1/√fan_in, 1/√fan_in)`.
    /// The FiLM generators start at identity modulation (zero weights,
    /// `gamma` bias 1, `beta` bias 0), the head weights at zero and the head
    /// bias at `head_bias`.
    pub fn init<R: Rng + ?Sized>(shape: &ModelShape, head_bias: T, rng: &mut R) -> Result<Self> {
        if shape.d_drug == 0 || shape.d_prot == 0 || shape.d_shared == 0 {
            return Err(Error::Config(
                "embedding dimensions must be positive".into(),
            ));
        }
        let rbf_centers = rbf_centers(shape.k)?;
        if !(shape.sigma > 0.0) || !shape.sigma.is_finite() {
            return Err(Error::Parameter(format!(
                "rbf sigma must be positive, got {}",
                shape.sigma
            )));
        }
        let mut uniform_affine = |out_dim: usize, in_dim: usize| {
            let bound = 1.0 / (in_dim as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let mut layer = Affine::zeros(out_dim, in_dim);
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = T::lit(dist.sample(&mut *rng));
            }
            layer
        };
        let proj_drug = uniform_affine(shape.d_shared, shape.d_drug);
        let proj_prot = uniform_affine(shape.d_shared, shape.d_prot);
        let mut film_gamma = Affine::zeros(shape.d_shared, shape.d_shared);
        film_gamma.bias.fill(T::one());
        let film_beta = Affine::zeros(shape.d_shared, shape.d_shared);
        Ok(ModelParams {
            proj_drug,
            proj_prot,
            film_gamma,
            film_beta,
            rbf_centers,
            rbf_sigma: T::lit(shape.sigma),
            head_w: vec![T::zero(); shape.k],
            head_b: head_bias,
        })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            d_drug: self.proj_drug.in_dim,
            d_prot: self.proj_prot.in_dim,
            d_shared: self.proj_drug.out_dim,
            k: self.rbf_centers.len(),
            sigma: self.rbf_sigma.to_f64_lossy(),
        }
    }

    /// Checks the structural invariants: consistent shapes, finite entries,
    /// positive `sigma`, evenly spaced centers spanning `[0, 2]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.rbf_sigma > T::zero()) || !self.rbf_sigma.is_finite() {
            return Err(Error::Parameter(format!(
                "rbf sigma must be positive, got {}",
                self.rbf_sigma
            )));
        }
        let d_shared = self.proj_drug.out_dim;
        let checks = [
            ("proj_prot.out_dim", d_shared, self.proj_prot.out_dim),
            ("film_gamma.in_dim", d_shared, self.film_gamma.in_dim),
            ("film_gamma.out_dim", d_shared, self.film_gamma.out_dim),
            ("film_beta.in_dim", d_shared, self.film_beta.in_dim),
            ("film_beta.out_dim", d_shared, self.film_beta.out_dim),
            ("head.weight", self.rbf_centers.len(), self.head_w.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::dim(what, expected, got));
            }
        }
        for layer in [
            &self.proj_drug,
            &self.proj_prot,
            &self.film_gamma,
            &self.film_beta,
        ] {
            if layer.weight.len() != layer.out_dim * layer.in_dim {
                return Err(Error::dim(
                    "affine weight",
                    layer.out_dim * layer.in_dim,
                    layer.weight.len(),
                ));
            }
            if layer.bias.len() != layer.out_dim {
                return Err(Error::dim("affine bias", layer.out_dim, layer.bias.len()));
            }
            if !layer.is_finite() {
                return Err(Error::Parameter("non-finite weight".into()));
            }
        }
        if !self.head_w.iter().all(|w| w.is_finite()) || !self.head_b.is_finite() {
            return Err(Error::Parameter("non-finite head weight".into()));
        }
        let expected = rbf_centers::<T>(self.rbf_centers.len())?;
        let tol = T::lit(1e-6);
        if expected
            .iter()
            .zip(&self.rbf_centers)
            .any(|(&e, &c)| (e - c).abs() > tol)
        {
            return Err(Error::Parameter(
                "rbf centers must be evenly spaced on [0, 2]".into(),
            ));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            proj_drug: self.proj_drug.cast(),
            proj_prot: self.proj_prot.cast(),
            film_gamma: self.film_gamma.cast(),
            film_beta: self.film_beta.cast(),
            rbf_centers: crate::scalar::convert_slice(&self.rbf_centers),
            rbf_sigma: U::lit(self.rbf_sigma.to_f64_lossy()),
            head_w: crate::scalar::convert_slice(&self.head_w),
            head_b: U::lit(self.head_b.to_f64_lossy()),
        }
    }
}

/// Partial derivatives of a scalar loss with respect to every trainable
/// tensor of [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub proj_drug: Affine<T>,
    pub proj_prot: Affine<T>,
    pub film_gamma: Affine<T>,
    pub film_beta: Affine<T>,
    pub head_w: Vec<T>,
    pub head_b: T,
}

impl<T: Scalar> Gradients<T> {
    tensor_accessors!();

    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        let z = |a: &Affine<T>| Affine::zeros(a.out_dim, a.in_dim);
        Gradients {
            proj_drug: z(&params.proj_drug),
            proj_prot: z(&params.proj_prot),
            film_gamma: z(&params.film_gamma),
            film_beta: z(&params.film_beta),
            head_w: vec![T::zero(); params.head_w.len()],
            head_b: T::zero(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in ParamTensor::ALL {
            for g in self.tensor_mut(t) {
                *g = *g * factor;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for t in ParamTensor::ALL {
            for (a, &b) in self.tensor_mut(t).iter_mut().zip(other.tensor(t)) {
                *a = *a + b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        ParamTensor::ALL
            .iter()
            .all(|&t| self.tensor(t).iter().all(|g| g.is_finite()))
    }

    pub fn max_abs(&self) -> T {
        ParamTensor::ALL
            .iter()
            .flat_map(|&t| self.tensor(t).iter())
            .fold(T::zero(), |m, g| m.max(g.abs()))
    }
}

/// Every intermediate of one forward evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub film: FilmMode,
    pub drug_input: Vec<T>,
    pub prot_input: Vec<T>,
    pub drug_proj: Vec<T>,
    pub prot_proj: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub conditioned: Vec<T>,
    pub drug_norm: T,
    pub prot_norm: T,
    pub drug_unit: Vec<T>,
    pub prot_unit: Vec<T>,
    /// Cosine distance before clamping to `[0, 2]`.
    pub raw_distance: T,
    pub distance: T,
    pub phi: Vec<T>,
    pub prediction: T,
}

/// `gamma ⊙ z + beta`.
pub fn film_forward<T: Scalar>(z: &[T], gamma: &[T], beta: &[T]) -> Result<Vec<T>> {
    if gamma.len() != z.len() {
        return Err(Error::dim("film gamma", z.len(), gamma.len()));
    }
    if beta.len() != z.len() {
        return Err(Error::dim("film beta", z.len(), beta.len()));
    }
    Ok(z.iter()
        .zip(gamma)
        .zip(beta)
        .map(|((&z, &g), &b)| g * z + b)
        .collect())
}

/// Unit vector in the direction of `v`; zero vectors are rejected.
pub fn normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    normalize_guarded(v, NormGuard::Strict).map(|(u, _)| u)
}

fn normalize_guarded<T: Scalar>(v: &[T], guard: NormGuard) -> Result<(Vec<T>, T)> {
    let norm = dot(v, v).sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("vector norm overflowed or is NaN".into()));
    }
    let norm = match guard {
        NormGuard::Strict => {
            if !(norm > T::zero()) {
                return Err(Error::DegenerateInput("zero-norm vector".into()));
            }
            norm
        }
        NormGuard::Floor(eps) => norm.max(T::lit(eps)),
    };
    Ok((v.iter().map(|&x| x / norm).collect(), norm))
}

fn clamp_distance<T: Scalar>(raw: T) -> T {
    raw.max(T::zero()).min(T::lit(2.0))
}

/// `1 − u·v / (‖u‖‖v‖)`, clamped to `[0, 2]`.
pub fn cosine_distance<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::dim("cosine distance operand", u.len(), v.len()));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if !(nu > T::zero()) || !(nv > T::zero()) {
        return Err(Error::DegenerateInput(
            "cosine distance of a zero-norm vector".into(),
        ));
    }
    Ok(clamp_distance(T::one() - dot(u, v) / (nu * nv)))
}

/// `k` centers evenly spaced on `[0, 2]`, both endpoints included.
pub fn rbf_centers<T: Scalar>(k: usize) -> Result<Vec<T>> {
    if k < 2 {
        return Err(Error::Config(format!(
            "need at least 2 rbf centers, got {k}"
        )));
    }
    let step = 2.0 / (k - 1) as f64;
    Ok((0..k)
        .map(|j| {
            if j + 1 == k {
                T::lit(2.0)
            } else {
                T::lit(j as f64 * step)
            }
        })
        .collect())
}

/// `φ_j = exp(−(dist − μ_j)² / (2σ²))`.
pub fn rbf_features<T: Scalar>(dist: T, centers: &[T], sigma: T) -> Result<Vec<T>> {
    if !(sigma > T::zero()) {
        return Err(Error::Parameter(format!(
            "rbf sigma must be positive, got {sigma}"
        )));
    }
    let denom = T::lit(2.0) * sigma * sigma;
    Ok(centers
        .iter()
        .map(|&mu| {
            let diff = dist - mu;
            (-(diff * diff) / denom).exp()
        })
        .collect())
}

/// `w · φ + b`.
pub fn head_forward<T: Scalar>(phi: &[T], w: &[T], b: T) -> Result<T> {
    if phi.len() != w.len() {
        return Err(Error::dim("head weight", phi.len(), w.len()));
    }
    Ok(dot(w, phi) + b)
}

/// Full forward pass for one (drug, protein) pair.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    drug: &[T],
    prot: &[T],
    opts: ForwardOptions,
) -> Result<ForwardTrace<T>> {
    let drug_proj = params.proj_drug.apply(drug)?;
    let prot_proj = params.proj_prot.apply(prot)?;
    let (gamma, beta, conditioned) = match opts.film {
        FilmMode::Learned => {
            let gamma = params.film_gamma.apply(&prot_proj)?;
            let beta = params.film_beta.apply(&prot_proj)?;
            let conditioned = film_forward(&drug_proj, &gamma, &beta)?;
            (gamma, beta, conditioned)
        }
        FilmMode::Identity => {
            let n = drug_proj.len();
            (vec![T::one(); n], vec![T::zero(); n], drug_proj.clone())
        }
    };
    let (drug_unit, drug_norm) = normalize_guarded(&conditioned, opts.guard)?;
    let (prot_unit, prot_norm) = normalize_guarded(&prot_proj, opts.guard)?;
    let raw_distance = T::one() - dot(&drug_unit, &prot_unit);
    let distance = clamp_distance(raw_distance);
    let phi = rbf_features(distance, &params.rbf_centers, params.rbf_sigma)?;
    let prediction = head_forward(&phi, &params.head_w, params.head_b)?;
    Ok(ForwardTrace {
        film: opts.film,
        drug_input: drug.to_vec(),
        prot_input: prot.to_vec(),
        drug_proj,
        prot_proj,
        gamma,
        beta,
        conditioned,
        drug_norm,
        prot_norm,
        drug_unit,
        prot_unit,
        raw_distance,
        distance,
        phi,
        prediction,
    })
}

/// Gradient of `n = v / r` pulled back to `v`: `(g − n (n·g)) / r`.
fn normalize_backward<T: Scalar>(unit: &[T], norm: T, g_unit: &[T], floored: bool) -> Vec<T> {
    if floored {
        return g_unit.iter().map(|&g| g / norm).collect();
    }
    let proj = dot(unit, g_unit);
    unit.iter()
        .zip(g_unit)
        .map(|(&n, &g)| (g - n * proj) / norm)
        .collect()
}

/// Analytic gradient of `d_loss_d_pred · prediction + d_loss_d_dist · distance`.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    trace: &ForwardTrace<T>,
    d_loss_d_pred: T,
    d_loss_d_dist: T,
    guard: NormGuard,
) -> Gradients<T> {
    let mut grads = Gradients::zeros_like(params);
    backward_accumulate(
        &mut grads,
        params,
        trace,
        d_loss_d_pred,
        d_loss_d_dist,
        guard,
    );
    grads
}

/// [`backward`] that adds into an existing accumulator.
pub fn backward_accumulate<T: Scalar>(
    grads: &mut Gradients<T>,
    params: &ModelParams<T>,
    trace: &ForwardTrace<T>,
    d_loss_d_pred: T,
    d_loss_d_dist: T,
    guard: NormGuard,
) {
    // Head.
    grads.head_b = grads.head_b + d_loss_d_pred;
    let sigma_sq = params.rbf_sigma * params.rbf_sigma;
    let mut g_dist = d_loss_d_dist;
    for (((gw, &phi), &w), &mu) in grads
        .head_w
        .iter_mut()
        .zip(&trace.phi)
        .zip(&params.head_w)
        .zip(&params.rbf_centers)
    {
        *gw = *gw + d_loss_d_pred * phi;
        // dφ/d(dist) = −φ (dist − μ) / σ²
        g_dist = g_dist - d_loss_d_pred * w * phi * (trace.distance - mu) / sigma_sq;
    }

    // The clamp blocks gradient only when it changed the value.
    if trace.raw_distance != trace.distance || g_dist == T::zero() {
        return;
    }
    let g_cos = -g_dist;
    let g_drug_unit: Vec<T> = trace.prot_unit.iter().map(|&t| g_cos * t).collect();
    let g_prot_unit: Vec<T> = trace.drug_unit.iter().map(|&d| g_cos * d).collect();

    let floor = match guard {
        NormGuard::Strict => None,
        NormGuard::Floor(eps) => Some(T::lit(eps)),
    };
    // The trace stores max(‖v‖, eps), so equality with eps marks an active floor.
    let floored = |norm: T| floor.is_some_and(|eps| norm == eps);
    let g_conditioned = normalize_backward(
        &trace.drug_unit,
        trace.drug_norm,
        &g_drug_unit,
        floored(trace.drug_norm),
    );
    let mut g_prot_proj = normalize_backward(
        &trace.prot_unit,
        trace.prot_norm,
        &g_prot_unit,
        floored(trace.prot_norm),
    );

    let g_drug_proj: Vec<T> = match trace.film {
        FilmMode::Learned => {
            let g_gamma: Vec<T> = g_conditioned
                .iter()
                .zip(&trace.drug_proj)
                .map(|(&g, &z)| g * z)
                .collect();
            grads
                .film_gamma
                .accumulate_outer(&g_gamma, &trace.prot_proj);
            grads
                .film_beta
                .accumulate_outer(&g_conditioned, &trace.prot_proj);
            params.film_gamma.backprop_input(&g_gamma, &mut g_prot_proj);
            params
                .film_beta
                .backprop_input(&g_conditioned, &mut g_prot_proj);
            g_conditioned
                .iter()
                .zip(&trace.gamma)
                .map(|(&g, &gamma)| g * gamma)
                .collect()
        }
        FilmMode::Identity => g_conditioned,
    };
    grads
        .proj_drug
        .accumulate_outer(&g_drug_proj, &trace.drug_input);
    grads
        .proj_prot
        .accumulate_outer(&g_prot_proj, &trace.prot_input);
}

/// Scalar objective used by [`grad_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CheckLoss {
    /// `prediction²`
    PredictionSquared,
    /// `distance`
    Distance,
    /// Huber loss of the prediction against `label`.
    Huber { label: f64, delta: f64 },
    /// Binary cross-entropy with the prediction as logit.
    Bce { label: f64 },
}

impl CheckLoss {
    fn value_and_sensitivities(self, trace: &ForwardTrace<f64>) -> Result<(f64, f64, f64)> {
        use crate::objectives::{bce_logit_loss, huber_loss};
        Ok(match self {
            CheckLoss::PredictionSquared => (
                trace.prediction * trace.prediction,
                2.0 * trace.prediction,
                0.0,
            ),
            CheckLoss::Distance => (trace.distance, 0.0, 1.0),
            CheckLoss::Huber { label, delta } => {
                let (l, g) = huber_loss(label, trace.prediction, delta)?;
                (l, g, 0.0)
            }
            CheckLoss::Bce { label } => {
                let (l, g) = bce_logit_loss(label, trace.prediction);
                (l, g, 0.0)
            }
        })
    }
}

/// Finite-difference step used by the gradient checks.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Maximum over `tensors` of `|analytic − numeric| / max(1, |analytic|, |numeric|)`
/// where `numeric` is the central difference of `objective` with step `step`.
pub fn finite_difference_error<F>(
    params: &ModelParams<f64>,
    analytic: &Gradients<f64>,
    tensors: impl IntoIterator<Item = ParamTensor>,
    step: f64,
    mut objective: F,
) -> Result<f64>
where
    F: FnMut(&ModelParams<f64>) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for t in tensors {
        for i in 0..params.tensor(t).len() {
            let orig = params.tensor(t)[i];
            probe.tensor_mut(t)[i] = orig + step;
            let plus = objective(&probe)?;
            probe.tensor_mut(t)[i] = orig - step;
            let minus = objective(&probe)?;
            probe.tensor_mut(t)[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.tensor(t)[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Compares [`backward`] against central finite differences of [`forward`]
/// for a single pair and returns the maximum relative error.
pub fn grad_check(
    params: &ModelParams<f64>,
    drug: &[f64],
    prot: &[f64],
    loss: CheckLoss,
    opts: ForwardOptions,
) -> Result<f64> {
    params.validate()?;
    let trace = forward(params, drug, prot, opts)?;
    let (_, g_pred, g_dist) = loss.value_and_sensitivities(&trace)?;
    let analytic = backward(params, &trace, g_pred, g_dist, opts.guard);
    finite_difference_error(
        params,
        &analytic,
        ParamTensor::trainable(opts.film),
        GRAD_CHECK_STEP,
        |p| {
            let tr = forward(p, drug, prot, opts)?;
            Ok(loss.value_and_sensitivities(&tr)?.0)
        },
    )
}
