//! Central-difference verification of the analytic loss gradients.
//!
//! Random inputs are constructed with a checkerboard sign pattern and
//! residual magnitudes in [0.1, 0.9], which keeps every sampled point away
//! from the L1 kink at 0 and the Smooth L1 transition at delta = 1.

use ndarray::{Array2, Array3, ArrayD, Ix2, Ix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{
    feature_distill_loss, gradient_loss, kd_output_losses, masked_huber, student_total_loss,
    teacher_loss, vertical_proxy_loss, LossResult, MetricMaps, StudentLossConfig,
    StudentLossInputs, TeacherLossConfig,
};

/// Gradient error threshold the `losscheck` command enforces.
pub const LOSSCHECK_THRESHOLD: f64 = 1e-4;

/// Minimum coordinates sampled per input array.
pub const MIN_COORDS: usize = 64;

/// Named result of one kernel verification.
#[derive(Debug, Clone)]
pub struct KernelCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
}

/// Compares analytic gradients against central differences on a random
/// coordinate subsample.
///
/// `grad_keys[i]` names the gradient entry corresponding to `inputs[i]`.
/// Returns the maximum relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(
    eval: &F,
    inputs: &[ArrayD<f64>],
    grad_keys: &[&str],
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64>
where
    F: Fn(&[ArrayD<f64>]) -> Result<LossResult>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter {
            name: "eps",
            message: format!("must be positive, got {eps}"),
        });
    }
    let base = eval(inputs)?;
    let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
    let mut max_rel = 0.0f64;

    for (idx, key) in grad_keys.iter().enumerate() {
        let analytic = base
            .grads
            .get(*key)
            .ok_or_else(|| Error::InvalidParameter {
                name: "grad_keys",
                message: format!("kernel returned no gradient named `{key}`"),
            })?
            .clone();
        if analytic.shape() != inputs[idx].shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient `{key}` shape {:?} vs input {:?}",
                analytic.shape(),
                inputs[idx].shape()
            )));
        }
        let numel = inputs[idx].len();
        let coords: Vec<usize> = if numel <= MIN_COORDS {
            (0..numel).collect()
        } else {
            (0..MIN_COORDS).map(|_| rng.gen_range(0..numel)).collect()
        };
        for coord in coords {
            let original = work[idx].as_slice().expect("contiguous")[coord];
            work[idx].as_slice_mut().expect("contiguous")[coord] = original + eps;
            let f_plus = eval(&work)?.total;
            work[idx].as_slice_mut().expect("contiguous")[coord] = original - eps;
            let f_minus = eval(&work)?.total;
            work[idx].as_slice_mut().expect("contiguous")[coord] = original;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic.as_slice().expect("contiguous")[coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

fn as2(input: &ArrayD<f64>) -> Array2<f64> {
    input.clone().into_dimensionality::<Ix2>().expect("2-d input")
}

fn as3(input: &ArrayD<f64>) -> Array3<f64> {
    input.clone().into_dimensionality::<Ix3>().expect("3-d input")
}

fn uniform2(rng: &mut ChaCha8Rng, dim: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn(dim, |_| rng.gen_range(lo..hi))
}

fn uniform3(
    rng: &mut ChaCha8Rng,
    dim: (usize, usize, usize),
    lo: f64,
    hi: f64,
) -> Array3<f64> {
    Array3::from_shape_fn(dim, |_| rng.gen_range(lo..hi))
}

/// Checkerboard-signed offsets with magnitude in [0.1, 0.9].
fn kink_safe_offsets(rng: &mut ChaCha8Rng, dim: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(dim, |(i, j)| {
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * rng.gen_range(0.1..0.9)
    })
}

fn random_mask(rng: &mut ChaCha8Rng, dim: (usize, usize), p_valid: f64) -> Array2<bool> {
    Array2::from_shape_fn(dim, |_| rng.gen_bool(p_valid))
}

fn project_features(proj: &Array2<f64>, features: &Array3<f64>) -> Array3<f64> {
    let (c_s, h, w) = features.dim();
    let c_t = proj.dim().0;
    Array3::from_shape_fn((c_t, h, w), |(ct, r, c)| {
        (0..c_s).map(|cs| proj[(ct, cs)] * features[(cs, r, c)]).sum()
    })
}

/// Feature-side fixture with strictly positive projection weights,
/// features, and residuals, so every analytic gradient coordinate is a
/// positive sum bounded away from the finite-difference noise floor.
fn feature_fixture(
    rng: &mut ChaCha8Rng,
    c_s: usize,
    c_t: usize,
    spatial: usize,
    pool: usize,
) -> (Array3<f64>, Array3<f64>, Array3<f64>, Array2<f64>) {
    let student = uniform3(rng, (c_s, spatial, spatial), 0.3, 1.0);
    let proj = uniform2(rng, (c_t, c_s), 0.2, 0.7);
    let teacher = {
        let projected = project_features(&proj, &student);
        let offsets = uniform3(rng, projected.dim(), 1.0, 2.0);
        &projected - &offsets
    };
    let teacher_coarse = {
        let pooled = super::average_pool(&student, pool).expect("divisible pooling");
        let projected = project_features(&proj, &pooled);
        let offsets = uniform3(rng, projected.dim(), 1.0, 2.0);
        &projected - &offsets
    };
    (student, teacher, teacher_coarse, proj)
}

/// Runs every loss kernel through the finite-difference harness on random
/// double-precision inputs (16x16 outputs, 8x16x16 student features).
pub fn standard_kernel_checks(eps: f64, seed: u64) -> Result<Vec<KernelCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = (16, 16);
    let mut checks = Vec::new();

    // masked_huber
    {
        let target = uniform2(&mut rng, dim, 0.0, 10.0);
        let pred = &target + &kink_safe_offsets(&mut rng, dim);
        let mask = random_mask(&mut rng, dim, 0.9);
        let target_c = target.clone();
        let mask_c = mask.clone();
        let eval = move |inputs: &[ArrayD<f64>]| {
            masked_huber(&as2(&inputs[0]), &target_c, &mask_c, 1.0)
        };
        let err = finite_difference_check(&eval, &[pred.into_dyn()], &["pred"], eps, &mut rng)?;
        checks.push(KernelCheck {
            name: "masked_huber",
            max_rel_error: err,
        });
    }

    // gradient_loss
    {
        let target = uniform2(&mut rng, dim, 0.0, 10.0);
        let pred = &target + &kink_safe_offsets(&mut rng, dim);
        let mask = random_mask(&mut rng, dim, 0.9);
        let target_c = target.clone();
        let mask_c = mask.clone();
        let eval = move |inputs: &[ArrayD<f64>]| {
            gradient_loss(&as2(&inputs[0]), &target_c, &mask_c)
        };
        let err = finite_difference_check(&eval, &[pred.into_dyn()], &["pred"], eps, &mut rng)?;
        checks.push(KernelCheck {
            name: "gradient_loss",
            max_rel_error: err,
        });
    }

    // teacher_loss
    {
        let targets = MetricMaps {
            chm: uniform2(&mut rng, dim, 0.0, 40.0),
            pai: uniform2(&mut rng, dim, 0.0, 6.0),
            fhd: uniform2(&mut rng, dim, 0.0, 3.0),
        };
        let preds: Vec<ArrayD<f64>> = [&targets.chm, &targets.pai, &targets.fhd]
            .into_iter()
            .map(|t| (t + &kink_safe_offsets(&mut rng, dim)).into_dyn())
            .collect();
        let mask = random_mask(&mut rng, dim, 0.9);
        let cfg = TeacherLossConfig::default();
        let eval = move |inputs: &[ArrayD<f64>]| {
            let maps = MetricMaps {
                chm: as2(&inputs[0]),
                pai: as2(&inputs[1]),
                fhd: as2(&inputs[2]),
            };
            teacher_loss(&maps, &targets, &mask, &cfg)
        };
        let err =
            finite_difference_check(&eval, &preds, &["chm", "pai", "fhd"], eps, &mut rng)?;
        checks.push(KernelCheck {
            name: "teacher_loss",
            max_rel_error: err,
        });
    }

    // kd_output_losses
    {
        let targets = MetricMaps {
            chm: uniform2(&mut rng, dim, 0.0, 40.0),
            pai: uniform2(&mut rng, dim, 0.0, 6.0),
            fhd: uniform2(&mut rng, dim, 0.0, 3.0),
        };
        let student: Vec<Array2<f64>> = [&targets.chm, &targets.pai, &targets.fhd]
            .into_iter()
            .map(|t| t + &kink_safe_offsets(&mut rng, dim))
            .collect();
        let teacher = MetricMaps {
            chm: &student[0] - &kink_safe_offsets(&mut rng, dim),
            pai: &student[1] - &kink_safe_offsets(&mut rng, dim),
            fhd: &student[2] - &kink_safe_offsets(&mut rng, dim),
        };
        let mask = random_mask(&mut rng, dim, 0.9);
        let inputs: Vec<ArrayD<f64>> =
            student.into_iter().map(|s| s.into_dyn()).collect();
        let eval = move |inputs: &[ArrayD<f64>]| {
            let maps = MetricMaps {
                chm: as2(&inputs[0]),
                pai: as2(&inputs[1]),
                fhd: as2(&inputs[2]),
            };
            kd_output_losses(&maps, &teacher, &targets, &mask, 1.0)
        };
        let err =
            finite_difference_check(&eval, &inputs, &["chm", "pai", "fhd"], eps, &mut rng)?;
        checks.push(KernelCheck {
            name: "kd_output_losses",
            max_rel_error: err,
        });
    }

    // feature_distill_loss (student features and projection)
    {
        let (student, teacher, _, proj) = feature_fixture(&mut rng, 8, 12, 16, 2);
        let eval = move |inputs: &[ArrayD<f64>]| {
            feature_distill_loss(&as3(&inputs[0]), &teacher, &as2(&inputs[1]))
        };
        let err = finite_difference_check(
            &eval,
            &[student.into_dyn(), proj.into_dyn()],
            &["student_feat", "proj"],
            eps,
            &mut rng,
        )?;
        checks.push(KernelCheck {
            name: "feature_distill_loss",
            max_rel_error: err,
        });
    }

    // vertical_proxy_loss
    {
        let (student, _, teacher_coarse, proj) = feature_fixture(&mut rng, 8, 12, 16, 2);
        let eval = move |inputs: &[ArrayD<f64>]| {
            vertical_proxy_loss(&as3(&inputs[0]), &teacher_coarse, &as2(&inputs[1]), 2)
        };
        let err = finite_difference_check(
            &eval,
            &[student.into_dyn(), proj.into_dyn()],
            &["student_feat", "proj"],
            eps,
            &mut rng,
        )?;
        checks.push(KernelCheck {
            name: "vertical_proxy_loss",
            max_rel_error: err,
        });
    }

    // student_total_loss (post warm-up, all terms active)
    {
        let targets = MetricMaps {
            chm: uniform2(&mut rng, dim, 0.0, 40.0),
            pai: uniform2(&mut rng, dim, 0.0, 6.0),
            fhd: uniform2(&mut rng, dim, 0.0, 3.0),
        };
        let student: Vec<Array2<f64>> = [&targets.chm, &targets.pai, &targets.fhd]
            .into_iter()
            .map(|t| t + &kink_safe_offsets(&mut rng, dim))
            .collect();
        let teacher = MetricMaps {
            chm: &student[0] - &kink_safe_offsets(&mut rng, dim),
            pai: &student[1] - &kink_safe_offsets(&mut rng, dim),
            fhd: &student[2] - &kink_safe_offsets(&mut rng, dim),
        };
        let mask = random_mask(&mut rng, dim, 0.9);
        let (student_feat, teacher_feat, teacher_coarse, proj) =
            feature_fixture(&mut rng, 8, 12, 16, 2);
        let cfg = StudentLossConfig::default();
        let epoch = cfg.warmup_epochs;

        let inputs: Vec<ArrayD<f64>> = vec![
            student[0].clone().into_dyn(),
            student[1].clone().into_dyn(),
            student[2].clone().into_dyn(),
            student_feat.into_dyn(),
            proj.into_dyn(),
        ];
        let eval = move |inputs: &[ArrayD<f64>]| {
            let maps = MetricMaps {
                chm: as2(&inputs[0]),
                pai: as2(&inputs[1]),
                fhd: as2(&inputs[2]),
            };
            let feat = as3(&inputs[3]);
            let proj = as2(&inputs[4]);
            student_total_loss(
                &StudentLossInputs {
                    student: &maps,
                    teacher: &teacher,
                    targets: &targets,
                    mask: &mask,
                    student_feat: &feat,
                    teacher_feat: &teacher_feat,
                    teacher_feat_coarse: &teacher_coarse,
                    proj: &proj,
                    vert_down_factor: 2,
                },
                &cfg,
                epoch,
            )
        };
        let err = finite_difference_check(
            &eval,
            &inputs,
            &["chm", "pai", "fhd", "student_feat", "proj"],
            eps,
            &mut rng,
        )?;
        checks.push(KernelCheck {
            name: "student_total_loss",
            max_rel_error: err,
        });
    }

    Ok(checks)
}
