//! Teacher and student loss kernels with analytic gradients.
//!
//! Kernels operate on arbitrary dense double-precision arrays with a shared
//! validity mask: masked Smooth L1 regression, a finite-difference CHM
//! gradient term, output distillation (masked L1 + Smooth L1 against the
//! frozen teacher), projected feature matching, and a vertical proxy that
//! average-pools student features to the teacher fusion scale. Every
//! kernel returns its term breakdown and gradients; `gradcheck` verifies
//! the gradients against central differences.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, ArrayD};

use crate::error::{Error, Result};

pub mod gradcheck;

pub use gradcheck::{finite_difference_check, standard_kernel_checks, KernelCheck};

/// Teacher optimization weights.
#[derive(Debug, Clone, Copy)]
pub struct TeacherLossConfig {
    /// Smooth L1 transition point.
    pub huber_delta: f64,
    /// Weight of the CHM gradient-consistency term.
    pub lambda_grad: f64,
    /// Average instead of summing across the three output channels.
    pub average_channels: bool,
}

impl Default for TeacherLossConfig {
    fn default() -> Self {
        TeacherLossConfig {
            huber_delta: 1.0,
            lambda_grad: 0.1,
            average_channels: false,
        }
    }
}

/// Student optimization weights, including the KD warm-up gate.
#[derive(Debug, Clone, Copy)]
pub struct StudentLossConfig {
    pub w_sup: f64,
    pub w_kd: f64,
    pub w_feat: f64,
    pub w_vert: f64,
    /// Epochs with the KD term disabled.
    pub warmup_epochs: usize,
    pub huber_delta: f64,
    pub average_channels: bool,
}

impl Default for StudentLossConfig {
    fn default() -> Self {
        StudentLossConfig {
            w_sup: 1.0,
            w_kd: 0.5,
            w_feat: 0.1,
            w_vert: 0.1,
            warmup_epochs: 5,
            huber_delta: 1.0,
            average_channels: false,
        }
    }
}

impl StudentLossConfig {
    /// KD weight after warm-up gating.
    pub fn effective_w_kd(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            0.0
        } else {
            self.w_kd
        }
    }
}

/// The three dense output maps the models predict.
#[derive(Debug, Clone)]
pub struct MetricMaps {
    pub chm: Array2<f64>,
    pub pai: Array2<f64>,
    pub fhd: Array2<f64>,
}

impl MetricMaps {
    pub fn bands(&self) -> [(&'static str, &Array2<f64>); 3] {
        [("chm", &self.chm), ("pai", &self.pai), ("fhd", &self.fhd)]
    }
}

/// Scalar loss with per-term breakdown and gradients keyed by input name.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
    pub grads: BTreeMap<String, ArrayD<f64>>,
}

impl LossResult {
    fn new(total: f64) -> Self {
        LossResult {
            total,
            terms: BTreeMap::new(),
            grads: BTreeMap::new(),
        }
    }

    fn term(mut self, name: &str, value: f64) -> Self {
        self.terms.insert(name.to_string(), value);
        self
    }
}

fn sign0(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn huber_value_grad(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() < delta {
        (0.5 * r * r / delta, r / delta)
    } else {
        (r.abs() - 0.5 * delta, sign0(r))
    }
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>, mask: &Array2<bool>) -> Result<()> {
    if a.dim() != b.dim() || a.dim() != mask.dim() {
        return Err(Error::ShapeMismatch(format!(
            "pred {:?} / target {:?} / mask {:?}",
            a.dim(),
            b.dim(),
            mask.dim()
        )));
    }
    Ok(())
}

/// Mean of a pointwise residual loss over valid pixels, with its gradient
/// with respect to `pred`. Invalid pixels contribute nothing to either.
fn masked_pointwise(
    pred: &Array2<f64>,
    target: &Array2<f64>,
    mask: &Array2<bool>,
    value_grad: impl Fn(f64) -> (f64, f64),
) -> Result<(f64, Array2<f64>)> {
    check_same_shape(pred, target, mask)?;
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let inv_n = 1.0 / n as f64;
    let mut sum = 0.0;
    let mut grad = Array2::zeros(pred.dim());
    for ((g, &m), (&p, &t)) in grad
        .iter_mut()
        .zip(mask.iter())
        .zip(pred.iter().zip(target.iter()))
    {
        if m {
            let (value, slope) = value_grad(p - t);
            sum += value;
            *g = slope * inv_n;
        }
    }
    Ok((sum * inv_n, grad))
}

/// Masked Smooth L1 (Huber) mean over valid pixels.
pub fn masked_huber(
    pred: &Array2<f64>,
    target: &Array2<f64>,
    mask: &Array2<bool>,
    delta: f64,
) -> Result<LossResult> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter {
            name: "huber_delta",
            message: format!("must be positive, got {delta}"),
        });
    }
    let (loss, grad) = masked_pointwise(pred, target, mask, |r| huber_value_grad(r, delta))?;
    let mut out = LossResult::new(loss).term("huber", loss);
    out.grads.insert("pred".to_string(), grad.into_dyn());
    Ok(out)
}

/// Masked L1 mean over valid pixels.
pub fn masked_l1(
    pred: &Array2<f64>,
    target: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<LossResult> {
    let (loss, grad) = masked_pointwise(pred, target, mask, |r| (r.abs(), sign0(r)))?;
    let mut out = LossResult::new(loss).term("l1", loss);
    out.grads.insert("pred".to_string(), grad.into_dyn());
    Ok(out)
}

/// L1 consistency of forward-difference gradients, per direction.
///
/// A difference position is valid only when both contributing pixels are
/// valid; each direction is averaged over its own positions and the two
/// means are summed. Constant shifts of either input cancel exactly.
pub fn gradient_loss(
    pred: &Array2<f64>,
    target: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<LossResult> {
    check_same_shape(pred, target, mask)?;
    let (h, w) = pred.dim();

    let mut nx = 0usize;
    let mut ny = 0usize;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for i in 0..h {
        for j in 0..w.saturating_sub(1) {
            if mask[(i, j)] && mask[(i, j + 1)] {
                nx += 1;
                sx += ((pred[(i, j + 1)] - pred[(i, j)]) - (target[(i, j + 1)] - target[(i, j)]))
                    .abs();
            }
        }
    }
    for i in 0..h.saturating_sub(1) {
        for j in 0..w {
            if mask[(i, j)] && mask[(i + 1, j)] {
                ny += 1;
                sy += ((pred[(i + 1, j)] - pred[(i, j)]) - (target[(i + 1, j)] - target[(i, j)]))
                    .abs();
            }
        }
    }
    if nx + ny == 0 {
        return Err(Error::NoValidPixels);
    }

    let mean_x = if nx > 0 { sx / nx as f64 } else { 0.0 };
    let mean_y = if ny > 0 { sy / ny as f64 } else { 0.0 };
    let mut grad = Array2::zeros(pred.dim());
    if nx > 0 {
        let inv = 1.0 / nx as f64;
        for i in 0..h {
            for j in 0..w - 1 {
                if mask[(i, j)] && mask[(i, j + 1)] {
                    let d = (pred[(i, j + 1)] - pred[(i, j)])
                        - (target[(i, j + 1)] - target[(i, j)]);
                    let s = sign0(d) * inv;
                    grad[(i, j + 1)] += s;
                    grad[(i, j)] -= s;
                }
            }
        }
    }
    if ny > 0 {
        let inv = 1.0 / ny as f64;
        for i in 0..h - 1 {
            for j in 0..w {
                if mask[(i, j)] && mask[(i + 1, j)] {
                    let d = (pred[(i + 1, j)] - pred[(i, j)])
                        - (target[(i + 1, j)] - target[(i, j)]);
                    let s = sign0(d) * inv;
                    grad[(i + 1, j)] += s;
                    grad[(i, j)] -= s;
                }
            }
        }
    }

    let mut out = LossResult::new(mean_x + mean_y)
        .term("grad_x", mean_x)
        .term("grad_y", mean_y);
    out.grads.insert("pred".to_string(), grad.into_dyn());
    Ok(out)
}

/// Stage-1 teacher loss: per-channel masked Smooth L1 plus the weighted
/// CHM gradient term.
pub fn teacher_loss(
    preds: &MetricMaps,
    targets: &MetricMaps,
    mask: &Array2<bool>,
    cfg: &TeacherLossConfig,
) -> Result<LossResult> {
    if cfg.lambda_grad < 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda_grad",
            message: format!("must be non-negative, got {}", cfg.lambda_grad),
        });
    }
    let channel_weight = if cfg.average_channels { 1.0 / 3.0 } else { 1.0 };
    let mut total = 0.0;
    let mut result = LossResult::new(0.0);

    for ((name, pred), (_, target)) in preds.bands().into_iter().zip(targets.bands()) {
        let huber = masked_huber(pred, target, mask, cfg.huber_delta)?;
        total += channel_weight * huber.total;
        result
            .terms
            .insert(format!("huber_{name}"), huber.total);
        let mut grad = huber.grads["pred"].clone();
        grad.mapv_inplace(|g| g * channel_weight);
        result.grads.insert(name.to_string(), grad);
    }

    let grad_term = gradient_loss(&preds.chm, &targets.chm, mask)?;
    total += cfg.lambda_grad * grad_term.total;
    result.terms.insert("grad_chm".to_string(), grad_term.total);
    result
        .terms
        .insert("lambda_grad".to_string(), cfg.lambda_grad);
    let chm_grad = result.grads.get_mut("chm").expect("chm gradient present");
    for (g, &gg) in chm_grad.iter_mut().zip(grad_term.grads["pred"].iter()) {
        *g += cfg.lambda_grad * gg;
    }

    result.total = total;
    Ok(result)
}

/// Stage-2 output losses: supervised masked L1 (`l_out`) and Smooth L1
/// distillation against the frozen teacher (`l_kd`), summed over channels.
/// Gradients are with respect to the student predictions only.
pub fn kd_output_losses(
    student: &MetricMaps,
    teacher: &MetricMaps,
    targets: &MetricMaps,
    mask: &Array2<bool>,
    delta: f64,
) -> Result<LossResult> {
    let mut l_out = 0.0;
    let mut l_kd = 0.0;
    let mut result = LossResult::new(0.0);
    for (((name, student_band), (_, teacher_band)), (_, target_band)) in student
        .bands()
        .into_iter()
        .zip(teacher.bands())
        .zip(targets.bands())
    {
        let out = masked_l1(student_band, target_band, mask)?;
        let kd = masked_huber(student_band, teacher_band, mask, delta)?;
        l_out += out.total;
        l_kd += kd.total;
        result.terms.insert(format!("out_{name}"), out.total);
        result.terms.insert(format!("kd_{name}"), kd.total);
        let mut grad = out.grads["pred"].clone();
        for (g, &kg) in grad.iter_mut().zip(kd.grads["pred"].iter()) {
            *g += kg;
        }
        result.grads.insert(name.to_string(), grad);
    }
    result.terms.insert("l_out".to_string(), l_out);
    result.terms.insert("l_kd".to_string(), l_kd);
    result.total = l_out + l_kd;
    Ok(result)
}

fn check_feature_dims(
    student: &Array3<f64>,
    teacher: &Array3<f64>,
    proj: &Array2<f64>,
) -> Result<()> {
    let (c_s, h_s, w_s) = student.dim();
    let (c_t, h_t, w_t) = teacher.dim();
    let (p_t, p_s) = proj.dim();
    if (h_s, w_s) != (h_t, w_t) {
        return Err(Error::ShapeMismatch(format!(
            "student spatial {h_s}x{w_s} vs teacher {h_t}x{w_t}"
        )));
    }
    if p_t != c_t || p_s != c_s {
        return Err(Error::ShapeMismatch(format!(
            "projection {p_t}x{p_s} vs channels teacher {c_t} / student {c_s}"
        )));
    }
    Ok(())
}

/// Mean squared error between the 1x1-projected student features and the
/// teacher features; gradients for both the student features and the
/// projection.
pub fn feature_distill_loss(
    student: &Array3<f64>,
    teacher: &Array3<f64>,
    proj: &Array2<f64>,
) -> Result<LossResult> {
    check_feature_dims(student, teacher, proj)?;
    let (c_s, h, w) = student.dim();
    let c_t = teacher.dim().0;
    let n = (c_t * h * w) as f64;
    let scale = 2.0 / n;

    let mut loss = 0.0;
    let mut grad_student = Array3::<f64>::zeros(student.dim());
    let mut grad_proj = Array2::<f64>::zeros(proj.dim());
    for row in 0..h {
        for col in 0..w {
            for ct in 0..c_t {
                let mut projected = 0.0;
                for cs in 0..c_s {
                    projected += proj[(ct, cs)] * student[(cs, row, col)];
                }
                let e = projected - teacher[(ct, row, col)];
                loss += e * e;
                for cs in 0..c_s {
                    grad_student[(cs, row, col)] += scale * proj[(ct, cs)] * e;
                    grad_proj[(ct, cs)] += scale * e * student[(cs, row, col)];
                }
            }
        }
    }
    loss /= n;

    let mut out = LossResult::new(loss).term("feat_mse", loss);
    out.grads
        .insert("student_feat".to_string(), grad_student.into_dyn());
    out.grads.insert("proj".to_string(), grad_proj.into_dyn());
    Ok(out)
}

/// Average-pools (channel-preserving, non-overlapping) by `factor`.
fn average_pool(features: &Array3<f64>, factor: usize) -> Result<Array3<f64>> {
    let (c, h, w) = features.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidParameter {
            name: "down_factor",
            message: format!("factor {factor} does not divide spatial dims {h}x{w}"),
        });
    }
    let inv = 1.0 / (factor * factor) as f64;
    let mut pooled = Array3::zeros((c, h / factor, w / factor));
    for ch in 0..c {
        for row in 0..h / factor {
            for col in 0..w / factor {
                let mut sum = 0.0;
                for dr in 0..factor {
                    for dc in 0..factor {
                        sum += features[(ch, row * factor + dr, col * factor + dc)];
                    }
                }
                pooled[(ch, row, col)] = sum * inv;
            }
        }
    }
    Ok(pooled)
}

/// Feature matching after average-pooling the student features down to the
/// teacher fusion scale; the pooling gradient spreads uniformly over each
/// block.
pub fn vertical_proxy_loss(
    student: &Array3<f64>,
    teacher: &Array3<f64>,
    proj: &Array2<f64>,
    down_factor: usize,
) -> Result<LossResult> {
    let pooled = average_pool(student, down_factor)?;
    let inner = feature_distill_loss(&pooled, teacher, proj)?;

    let inv = 1.0 / (down_factor * down_factor) as f64;
    let pooled_grad = &inner.grads["student_feat"];
    let (c, h, w) = student.dim();
    let mut grad_student = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for row in 0..h {
            for col in 0..w {
                grad_student[(ch, row, col)] =
                    pooled_grad[[ch, row / down_factor, col / down_factor]] * inv;
            }
        }
    }

    let mut out = LossResult::new(inner.total).term("vert_mse", inner.total);
    out.grads
        .insert("student_feat".to_string(), grad_student.into_dyn());
    out.grads
        .insert("proj".to_string(), inner.grads["proj"].clone());
    Ok(out)
}

/// Inputs to the combined student objective. The teacher side is frozen:
/// no gradients are produced for teacher predictions or features.
#[derive(Debug, Clone)]
pub struct StudentLossInputs<'a> {
    pub student: &'a MetricMaps,
    pub teacher: &'a MetricMaps,
    pub targets: &'a MetricMaps,
    pub mask: &'a Array2<bool>,
    pub student_feat: &'a Array3<f64>,
    /// Teacher fused features at the student feature scale.
    pub teacher_feat: &'a Array3<f64>,
    /// Teacher fused features at the pooled (fusion) scale.
    pub teacher_feat_coarse: &'a Array3<f64>,
    pub proj: &'a Array2<f64>,
    pub vert_down_factor: usize,
}

/// Combined student objective with KD warm-up gating.
///
/// During warm-up the KD term is skipped entirely, so teacher predictions
/// cannot influence the value or the gradients.
pub fn student_total_loss(
    inputs: &StudentLossInputs,
    cfg: &StudentLossConfig,
    epoch: usize,
) -> Result<LossResult> {
    if !(cfg.w_sup > 0.0) {
        return Err(Error::InvalidParameter {
            name: "w_sup",
            message: format!("must be positive, got {}", cfg.w_sup),
        });
    }
    for (name, w) in [
        ("w_kd", cfg.w_kd),
        ("w_feat", cfg.w_feat),
        ("w_vert", cfg.w_vert),
    ] {
        if w < 0.0 {
            return Err(Error::InvalidParameter {
                name: "weights",
                message: format!("{name} must be non-negative, got {w}"),
            });
        }
    }

    let w_kd = cfg.effective_w_kd(epoch);
    let channel_weight = if cfg.average_channels { 1.0 / 3.0 } else { 1.0 };
    let mut result = LossResult::new(0.0);

    let mut l_out = 0.0;
    let mut output_grads: BTreeMap<&str, ArrayD<f64>> = BTreeMap::new();
    for ((name, student_band), (_, target_band)) in
        inputs.student.bands().into_iter().zip(inputs.targets.bands())
    {
        let out = masked_l1(student_band, target_band, inputs.mask)?;
        l_out += channel_weight * out.total;
        let mut grad = out.grads["pred"].clone();
        grad.mapv_inplace(|g| g * cfg.w_sup * channel_weight);
        output_grads.insert(name, grad);
    }

    let mut l_kd = 0.0;
    if w_kd > 0.0 {
        for ((name, student_band), (_, teacher_band)) in
            inputs.student.bands().into_iter().zip(inputs.teacher.bands())
        {
            let kd = masked_huber(student_band, teacher_band, inputs.mask, cfg.huber_delta)?;
            l_kd += channel_weight * kd.total;
            let grad = output_grads.get_mut(name).expect("band gradient present");
            for (g, &kg) in grad.iter_mut().zip(kd.grads["pred"].iter()) {
                *g += w_kd * channel_weight * kg;
            }
        }
    }

    let feat = feature_distill_loss(inputs.student_feat, inputs.teacher_feat, inputs.proj)?;
    let vert = vertical_proxy_loss(
        inputs.student_feat,
        inputs.teacher_feat_coarse,
        inputs.proj,
        inputs.vert_down_factor,
    )?;

    let mut feat_grad = feat.grads["student_feat"].clone();
    for (g, &vg) in feat_grad.iter_mut().zip(vert.grads["student_feat"].iter()) {
        *g = cfg.w_feat * *g + cfg.w_vert * vg;
    }
    let mut proj_grad = feat.grads["proj"].clone();
    for (g, &vg) in proj_grad.iter_mut().zip(vert.grads["proj"].iter()) {
        *g = cfg.w_feat * *g + cfg.w_vert * vg;
    }

    for (name, grad) in output_grads {
        result.grads.insert(name.to_string(), grad);
    }
    result.grads.insert("student_feat".to_string(), feat_grad);
    result.grads.insert("proj".to_string(), proj_grad);

    result.total =
        cfg.w_sup * l_out + w_kd * l_kd + cfg.w_feat * feat.total + cfg.w_vert * vert.total;
    result.terms.insert("l_out".to_string(), l_out);
    result.terms.insert("l_kd".to_string(), l_kd);
    result.terms.insert("l_feat".to_string(), feat.total);
    result.terms.insert("l_vert".to_string(), vert.total);
    result.terms.insert("w_kd_effective".to_string(), w_kd);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn all_valid(dim: (usize, usize)) -> Array2<bool> {
        Array2::from_elem(dim, true)
    }

    #[test]
    fn huber_zero_residual() {
        let pred = array![[1.0, 2.0], [3.0, 4.0]];
        let mask = all_valid((2, 2));
        let r = masked_huber(&pred, &pred.clone(), &mask, 1.0).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.grads["pred"].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn huber_quadratic_branch() {
        let pred = array![[0.5]];
        let target = array![[0.0]];
        let r = masked_huber(&pred, &target, &all_valid((1, 1)), 1.0).unwrap();
        assert_eq!(r.total, 0.125);
        assert_eq!(r.grads["pred"][[0, 0]], 0.5);
    }

    #[test]
    fn huber_linear_branch() {
        let pred = array![[2.0]];
        let target = array![[0.0]];
        let r = masked_huber(&pred, &target, &all_valid((1, 1)), 1.0).unwrap();
        assert_eq!(r.total, 1.5);
        assert_eq!(r.grads["pred"][[0, 0]], 1.0);
    }

    #[test]
    fn huber_rejects_empty_mask() {
        let pred = array![[1.0]];
        let mask = Array2::from_elem((1, 1), false);
        assert!(matches!(
            masked_huber(&pred, &pred.clone(), &mask, 1.0),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn gradient_loss_shift_invariance() {
        let target = array![[1.0, 3.0, 2.0], [0.5, 2.5, 4.0]];
        let mask = all_valid((2, 3));
        let shifted = target.mapv(|v| v + 11.5);
        let r = gradient_loss(&shifted, &target, &mask).unwrap();
        assert_eq!(r.total, 0.0);
        let same = gradient_loss(&target, &target, &mask).unwrap();
        assert_eq!(same.total, 0.0);
    }

    #[test]
    fn gradient_loss_single_forward_difference() {
        let pred = array![[0.0, 2.0]];
        let target = array![[0.0, 0.0]];
        let r = gradient_loss(&pred, &target, &all_valid((1, 2))).unwrap();
        assert_eq!(r.total, 2.0);
        assert_eq!(r.terms["grad_x"], 2.0);
        assert_eq!(r.terms["grad_y"], 0.0);
    }

    fn maps_from(base: &Array2<f64>, offsets: [f64; 3]) -> MetricMaps {
        MetricMaps {
            chm: base.mapv(|v| v + offsets[0]),
            pai: base.mapv(|v| v + offsets[1]),
            fhd: base.mapv(|v| v + offsets[2]),
        }
    }

    #[test]
    fn teacher_loss_zero_at_targets() {
        let base = array![[1.0, 2.0], [3.0, 4.0]];
        let maps = maps_from(&base, [0.0; 3]);
        let r = teacher_loss(
            &maps,
            &maps.clone(),
            &all_valid((2, 2)),
            &TeacherLossConfig::default(),
        )
        .unwrap();
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn teacher_loss_isolates_single_channel() {
        // Only PAI is offset by a constant 2.0: the Huber linear branch
        // gives 1.5 and the gradient term sees no CHM difference.
        let base = array![[1.0, 2.0], [3.0, 4.0]];
        let preds = maps_from(&base, [0.0, 2.0, 0.0]);
        let targets = maps_from(&base, [0.0; 3]);
        let r = teacher_loss(
            &preds,
            &targets,
            &all_valid((2, 2)),
            &TeacherLossConfig::default(),
        )
        .unwrap();
        assert_eq!(r.terms["huber_pai"], 1.5);
        assert_eq!(r.terms["huber_chm"], 0.0);
        assert_eq!(r.terms["grad_chm"], 0.0);
        assert_eq!(r.total, 1.5);
    }

    #[test]
    fn teacher_loss_reproduces_published_weighting() {
        // CHM residuals (1, 2) put each pixel on the linear branch with
        // mean 1 and a unit x-difference; PAI/FHD sit at constant 1.5
        // residuals. Every component is exactly 1, so the total is 3.1.
        let target = array![[5.0, 7.0]];
        let preds = MetricMaps {
            chm: array![[6.0, 9.0]],
            pai: target.mapv(|v| v + 1.5),
            fhd: target.mapv(|v| v + 1.5),
        };
        let targets = MetricMaps {
            chm: target.clone(),
            pai: target.clone(),
            fhd: target.clone(),
        };
        let r = teacher_loss(
            &preds,
            &targets,
            &all_valid((1, 2)),
            &TeacherLossConfig::default(),
        )
        .unwrap();
        assert_eq!(r.terms["huber_chm"], 1.0);
        assert_eq!(r.terms["huber_pai"], 1.0);
        assert_eq!(r.terms["huber_fhd"], 1.0);
        assert_eq!(r.terms["grad_chm"], 1.0);
        assert!((r.total - 3.1).abs() < 1e-12);
    }

    #[test]
    fn kd_terms_are_independent() {
        let base = array![[1.0, 2.0], [3.0, 4.0]];
        let student = maps_from(&base, [0.0; 3]);
        let teacher = maps_from(&base, [0.5, 0.0, 0.0]);
        let mask = all_valid((2, 2));
        let r = kd_output_losses(&student, &teacher, &student.clone(), &mask, 1.0).unwrap();
        assert_eq!(r.terms["l_out"], 0.0);
        assert!(r.terms["l_kd"] > 0.0);

        let same = kd_output_losses(&student, &student.clone(), &student.clone(), &mask, 1.0)
            .unwrap();
        assert_eq!(same.total, 0.0);
    }

    #[test]
    fn kd_single_pixel_values() {
        let student = MetricMaps {
            chm: array![[1.0]],
            pai: array![[0.0]],
            fhd: array![[0.0]],
        };
        let targets = MetricMaps {
            chm: array![[0.0]],
            pai: array![[0.0]],
            fhd: array![[0.0]],
        };
        let teacher = MetricMaps {
            chm: array![[0.5]],
            pai: array![[0.0]],
            fhd: array![[0.0]],
        };
        let r = kd_output_losses(&student, &teacher, &targets, &all_valid((1, 1)), 1.0).unwrap();
        assert_eq!(r.terms["l_out"], 1.0);
        assert_eq!(r.terms["l_kd"], 0.125);
    }

    #[test]
    fn feature_loss_scalar_cases() {
        let student = Array3::from_elem((1, 1, 1), 2.0);
        let teacher = Array3::from_elem((1, 1, 1), 5.0);
        let proj = array![[3.0]];
        let r = feature_distill_loss(&student, &teacher, &proj).unwrap();
        assert_eq!(r.total, 1.0);

        let identity = feature_distill_loss(&teacher, &teacher, &array![[1.0]]).unwrap();
        assert_eq!(identity.total, 0.0);

        let zero_proj = feature_distill_loss(&student, &teacher, &array![[0.0]]).unwrap();
        assert_eq!(zero_proj.total, 25.0);
    }

    #[test]
    fn feature_loss_zero_projection_is_mean_teacher_square() {
        let teacher =
            Array3::from_shape_fn((2, 2, 2), |(c, h, w)| (c + 2 * h + w) as f64 * 0.5);
        let student = Array3::from_elem((3, 2, 2), 1.0);
        let proj = Array2::zeros((2, 3));
        let r = feature_distill_loss(&student, &teacher, &proj).unwrap();
        let expected = teacher.iter().map(|&t| t * t).sum::<f64>() / 8.0;
        assert!((r.total - expected).abs() < 1e-15);
    }

    #[test]
    fn feature_loss_rejects_dim_mismatch() {
        let student = Array3::zeros((2, 4, 4));
        let teacher = Array3::zeros((3, 4, 4));
        let proj = Array2::zeros((3, 3));
        assert!(matches!(
            feature_distill_loss(&student, &teacher, &proj),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn vertical_proxy_factor_one_equals_feature_loss() {
        let student = Array3::from_shape_fn((2, 4, 4), |(c, h, w)| (c + h * w) as f64 * 0.1);
        let teacher = Array3::from_shape_fn((2, 4, 4), |(c, h, w)| (c * h + w) as f64 * 0.2);
        let proj = array![[1.0, 0.5], [0.25, -1.0]];
        let direct = feature_distill_loss(&student, &teacher, &proj).unwrap();
        let pooled = vertical_proxy_loss(&student, &teacher, &proj, 1).unwrap();
        assert_eq!(direct.total, pooled.total);
        assert_eq!(direct.grads["student_feat"], pooled.grads["student_feat"]);
    }

    #[test]
    fn vertical_proxy_block_mean() {
        let mut student = Array3::zeros((1, 2, 2));
        student[(0, 1, 0)] = 4.0;
        student[(0, 1, 1)] = 4.0;
        let teacher = Array3::from_elem((1, 1, 1), 2.0);
        let r = vertical_proxy_loss(&student, &teacher, &array![[1.0]], 2).unwrap();
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn vertical_proxy_constant_field_matches_factor_one() {
        let student = Array3::from_elem((2, 4, 4), 1.25);
        let coarse = Array3::from_elem((2, 2, 2), 0.5);
        let fine = Array3::from_elem((2, 4, 4), 0.5);
        let proj = array![[1.0, 0.0], [0.0, 1.0]];
        let pooled = vertical_proxy_loss(&student, &coarse, &proj, 2).unwrap();
        let direct = feature_distill_loss(&student, &fine, &proj).unwrap();
        assert_eq!(pooled.total, direct.total);
    }

    fn student_fixture(
        base: &Array2<f64>,
    ) -> (MetricMaps, MetricMaps, MetricMaps, Array3<f64>, Array3<f64>, Array2<f64>) {
        let targets = maps_from(base, [0.0; 3]);
        let student = maps_from(base, [1.0, 0.0, 0.0]);
        let teacher = MetricMaps {
            chm: student.chm.mapv(|v| v - 1.5),
            pai: student.pai.clone(),
            fhd: student.fhd.clone(),
        };
        let student_feat = Array3::from_elem((1, 1, 1), 2.0);
        let teacher_feat = Array3::from_elem((1, 1, 1), 5.0);
        let proj = array![[3.0]];
        (targets, student, teacher, student_feat, teacher_feat, proj)
    }

    #[test]
    fn student_total_reproduces_published_weighting() {
        // Every component is exactly 1: l_out from a unit CHM offset,
        // l_kd from a 1.5 CHM offset on the Huber linear branch, and the
        // scalar feature case (3 * 2 - 5)^2 for both feature terms.
        let base = array![[4.0]];
        let (targets, student, teacher, student_feat, teacher_feat, proj) =
            student_fixture(&base);
        let mask = all_valid((1, 1));
        let inputs = StudentLossInputs {
            student: &student,
            teacher: &teacher,
            targets: &targets,
            mask: &mask,
            student_feat: &student_feat,
            teacher_feat: &teacher_feat,
            teacher_feat_coarse: &teacher_feat,
            proj: &proj,
            vert_down_factor: 1,
        };
        let cfg = StudentLossConfig::default();
        let r = student_total_loss(&inputs, &cfg, cfg.warmup_epochs).unwrap();
        assert_eq!(r.terms["l_out"], 1.0);
        assert_eq!(r.terms["l_kd"], 1.0);
        assert_eq!(r.terms["l_feat"], 1.0);
        assert_eq!(r.terms["l_vert"], 1.0);
        assert!((r.total - 1.7).abs() < 1e-12);
    }

    #[test]
    fn warmup_gates_out_the_teacher() {
        let base = array![[4.0, 2.0]];
        let (targets, student, teacher, student_feat, teacher_feat, proj) =
            student_fixture(&base);
        let mask = all_valid((1, 2));
        let cfg = StudentLossConfig::default();

        let mut perturbed_teacher = teacher.clone();
        perturbed_teacher.chm.mapv_inplace(|v| v * -3.7 + 11.0);
        perturbed_teacher.pai.mapv_inplace(|v| v + 123.0);

        let run = |teacher_maps: &MetricMaps, epoch: usize| {
            let inputs = StudentLossInputs {
                student: &student,
                teacher: teacher_maps,
                targets: &targets,
                mask: &mask,
                student_feat: &student_feat,
                teacher_feat: &teacher_feat,
                teacher_feat_coarse: &teacher_feat,
                proj: &proj,
                vert_down_factor: 1,
            };
            student_total_loss(&inputs, &cfg, epoch).unwrap()
        };

        let a = run(&teacher, 0);
        let b = run(&perturbed_teacher, 0);
        assert_eq!(a.total, b.total);
        assert_eq!(a.terms["w_kd_effective"], 0.0);
        assert_eq!(a.grads["chm"], b.grads["chm"]);

        let post = run(&perturbed_teacher, cfg.warmup_epochs);
        assert_eq!(post.terms["w_kd_effective"], 0.5);
        assert_ne!(post.total, a.total);
    }

    #[test]
    fn weights_scale_terms_linearly() {
        let base = array![[4.0, 2.0]];
        let (targets, student, teacher, student_feat, teacher_feat, proj) =
            student_fixture(&base);
        let mask = all_valid((1, 2));
        let inputs = StudentLossInputs {
            student: &student,
            teacher: &teacher,
            targets: &targets,
            mask: &mask,
            student_feat: &student_feat,
            teacher_feat: &teacher_feat,
            teacher_feat_coarse: &teacher_feat,
            proj: &proj,
            vert_down_factor: 1,
        };
        let cfg = StudentLossConfig::default();
        let doubled = StudentLossConfig {
            w_feat: cfg.w_feat * 2.0,
            ..cfg
        };
        let a = student_total_loss(&inputs, &cfg, 10).unwrap();
        let b = student_total_loss(&inputs, &doubled, 10).unwrap();
        assert_eq!(a.terms["l_feat"], b.terms["l_feat"]);
        // The feat contribution itself doubles exactly; the totals differ
        // by it up to one rounding of the final sum.
        assert_eq!(doubled.w_feat * a.terms["l_feat"], 2.0 * (cfg.w_feat * a.terms["l_feat"]));
        assert!(((b.total - a.total) - cfg.w_feat * a.terms["l_feat"]).abs() < 1e-15);
    }

    #[test]
    fn totals_are_the_weighted_sum_of_terms() {
        let base = array![[4.0, 2.0], [1.0, 7.0]];
        let (targets, student, teacher, student_feat, teacher_feat, proj) =
            student_fixture(&base);
        let mask = all_valid((2, 2));

        let teacher_cfg = TeacherLossConfig::default();
        let t = teacher_loss(&student, &targets, &mask, &teacher_cfg).unwrap();
        let expected = t.terms["huber_chm"]
            + t.terms["huber_pai"]
            + t.terms["huber_fhd"]
            + teacher_cfg.lambda_grad * t.terms["grad_chm"];
        assert!((t.total - expected).abs() < 1e-12);

        let kd = kd_output_losses(&student, &teacher, &targets, &mask, 1.0).unwrap();
        assert!((kd.total - (kd.terms["l_out"] + kd.terms["l_kd"])).abs() < 1e-12);

        let cfg = StudentLossConfig::default();
        let inputs = StudentLossInputs {
            student: &student,
            teacher: &teacher,
            targets: &targets,
            mask: &mask,
            student_feat: &student_feat,
            teacher_feat: &teacher_feat,
            teacher_feat_coarse: &teacher_feat,
            proj: &proj,
            vert_down_factor: 1,
        };
        let s = student_total_loss(&inputs, &cfg, cfg.warmup_epochs + 1).unwrap();
        let expected = cfg.w_sup * s.terms["l_out"]
            + s.terms["w_kd_effective"] * s.terms["l_kd"]
            + cfg.w_feat * s.terms["l_feat"]
            + cfg.w_vert * s.terms["l_vert"];
        assert!((s.total - expected).abs() < 1e-12);
    }

    #[test]
    fn channel_averaging_divides_output_terms_by_three() {
        let base = array![[4.0, 2.0]];
        let (targets, student, teacher, student_feat, teacher_feat, proj) =
            student_fixture(&base);
        let mask = all_valid((1, 2));
        let inputs = StudentLossInputs {
            student: &student,
            teacher: &teacher,
            targets: &targets,
            mask: &mask,
            student_feat: &student_feat,
            teacher_feat: &teacher_feat,
            teacher_feat_coarse: &teacher_feat,
            proj: &proj,
            vert_down_factor: 1,
        };
        let summed = StudentLossConfig::default();
        let averaged = StudentLossConfig {
            average_channels: true,
            ..summed
        };
        let a = student_total_loss(&inputs, &summed, 10).unwrap();
        let b = student_total_loss(&inputs, &averaged, 10).unwrap();
        assert!((b.terms["l_out"] - a.terms["l_out"] / 3.0).abs() < 1e-15);
        assert!((b.terms["l_kd"] - a.terms["l_kd"] / 3.0).abs() < 1e-15);
        assert_eq!(a.terms["l_feat"], b.terms["l_feat"]);
    }

    #[test]
    fn masked_pixels_cannot_influence_losses() {
        let mut mask = all_valid((2, 2));
        mask[(0, 1)] = false;
        let target = array![[1.0, 2.0], [3.0, 4.0]];
        let pred = array![[1.5, 2.5], [3.5, 4.5]];
        let mut poisoned = pred.clone();
        poisoned[(0, 1)] = 1.0e9;

        for (a, b) in [
            (
                masked_huber(&pred, &target, &mask, 1.0).unwrap(),
                masked_huber(&poisoned, &target, &mask, 1.0).unwrap(),
            ),
            (
                gradient_loss(&pred, &target, &mask).unwrap(),
                gradient_loss(&poisoned, &target, &mask).unwrap(),
            ),
        ] {
            assert_eq!(a.total, b.total);
            assert_eq!(a.grads["pred"], b.grads["pred"]);
        }
    }
}
