//! Finite-difference verification harness: every loss term and the assembled
//! objectives in all three modes are compared against central differences on
//! seeded fixtures at desk scale (16-24 px, f64).
//!
//! ReLU makes the network piecewise linear, so derivative checks are only
//! meaningful away from the kinks; the committed fixture seeds were chosen so
//! that no probe crosses one, and loss-term checks (which are smooth in their
//! inputs) use the conventional h = 1e-3 * max(1, |value|) step.

use crate::image::Image;
use crate::losses::{
    build_masked_style_target, build_style_target, content_loss, faithfulness_loss,
    masked_style_loss_with_target, style_loss, Mode,
};
use crate::masks::{MaskPair, MaskProvenance, MaskSet};
use crate::net::{FeatureMap, Network};
use crate::optim::{LatentInit, Objective, ObjectiveConfig};
use crate::rng::Rng64;
use crate::sampling::GaussianKernel;

/// Outcome of one derivative check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub checks: Vec<CheckResult>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    /// Fixed-format report, identical across runs for identical inputs.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<44} max rel err {:>10.3e}  (tol {:.0e})  {}\n",
                c.name,
                c.max_rel_error,
                c.tolerance,
                if c.passed() { "ok" } else { "FAIL" }
            ));
        }
        out.push_str(if self.all_passed() {
            "all gradient checks passed\n"
        } else {
            "GRADIENT CHECKS FAILED\n"
        });
        out
    }
}

const TOL: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
    let mut rng = Rng64::new(seed);
    FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.next_f64() - 0.3).collect()).unwrap()
}

fn random_image(h: usize, w: usize, seed: u64) -> Image<f64> {
    let mut rng = Rng64::new(seed);
    Image::from_fn(h, w, |_, _| rng.next_f64())
}

/// Max relative error between an analytic gradient and central differences of
/// `f`, probing every `stride`-th coordinate of `x`.
fn check_elementwise(
    x: &mut [f64],
    analytic: &[f64],
    stride: usize,
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in (0..x.len()).step_by(stride) {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(x);
        x[i] = orig - h;
        let down = f(x);
        x[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(fd, analytic[i]));
    }
    worst
}

fn content_check() -> f64 {
    use crate::net::layer_index;
    let c = random_map(3, 6, 6, 801);
    let x = random_map(3, 6, 6, 802);
    let stack_of = |fm: &FeatureMap<f64>| {
        let deepest = layer_index("conv4_2").unwrap();
        let mut maps: Vec<FeatureMap<f64>> =
            (0..=deepest).map(|_| FeatureMap::zeros(1, 1, 1)).collect();
        maps[deepest] = fm.clone();
        crate::net::ActivationStack {
            input: FeatureMap::zeros(3, 1, 1),
            maps,
        }
    };
    let c_stack = stack_of(&c);
    let (v, g) = content_loss(&c_stack, &stack_of(&x), "conv4_2").unwrap();
    let h = 1e-3 * v.abs().max(1.0);
    let mut data = x.data.clone();
    check_elementwise(&mut data, &g.data, 1, h, |d| {
        let probe = FeatureMap::from_vec(3, 6, 6, d.to_vec()).unwrap();
        content_loss(&c_stack, &stack_of(&probe), "conv4_2").unwrap().0
    })
}

fn style_check() -> f64 {
    use crate::net::layer_index;
    let s = random_map(3, 6, 6, 803);
    let x = random_map(3, 6, 6, 804);
    let stack_of = |fm: &FeatureMap<f64>| {
        let deepest = layer_index("conv1_1").unwrap();
        let mut maps: Vec<FeatureMap<f64>> =
            (0..=deepest).map(|_| FeatureMap::zeros(1, 1, 1)).collect();
        maps[deepest] = fm.clone();
        crate::net::ActivationStack {
            input: FeatureMap::zeros(3, 1, 1),
            maps,
        }
    };
    let weights = vec![("conv1_1".to_string(), 1.0)];
    let target = build_style_target(&stack_of(&s), &weights).unwrap();
    let eval = style_loss(&target, &stack_of(&x)).unwrap();
    let h = 1e-3 * eval.value.abs().max(1.0);
    let mut data = x.data.clone();
    check_elementwise(&mut data, &eval.grads[0].1.data, 1, h, |d| {
        let probe = FeatureMap::from_vec(3, 6, 6, d.to_vec()).unwrap();
        style_loss(&target, &stack_of(&probe)).unwrap().value
    })
}

fn masked_style_check() -> f64 {
    use crate::net::layer_index;
    let s = random_map(2, 8, 8, 805);
    let x = random_map(2, 8, 8, 806);
    let m1 = Image::<f64>::from_fn(16, 16, |y, _| (y < 10) as u64 as f64);
    let m2 = Image::<f64>::from_fn(16, 16, |y, _| (y >= 6) as u64 as f64);
    let set = MaskSet {
        pairs: vec![
            MaskPair {
                x: m1.clone(),
                s: m1,
            },
            MaskPair {
                x: m2.clone(),
                s: m2,
            },
        ],
        provenance: MaskProvenance::Manual,
    };
    let stack_of = |fm: &FeatureMap<f64>| {
        let deepest = layer_index("conv1_1").unwrap();
        let mut maps: Vec<FeatureMap<f64>> =
            (0..=deepest).map(|_| FeatureMap::zeros(1, 1, 1)).collect();
        maps[deepest] = fm.clone();
        crate::net::ActivationStack {
            input: FeatureMap::zeros(3, 1, 1),
            maps,
        }
    };
    let weights = vec![("conv1_1".to_string(), 1.0)];
    let target = build_masked_style_target(&set, &stack_of(&s), &stack_of(&x), &weights).unwrap();
    let eval = masked_style_loss_with_target(&target, &stack_of(&x)).unwrap();
    let h = 1e-3 * eval.value.abs().max(1.0);
    let mut data = x.data.clone();
    check_elementwise(&mut data, &eval.grads[0].1.data, 1, h, |d| {
        let probe = FeatureMap::from_vec(2, 8, 8, d.to_vec()).unwrap();
        masked_style_loss_with_target(&target, &stack_of(&probe)).unwrap().value
    })
}

fn faithfulness_check() -> f64 {
    let x = random_image(12, 12, 807);
    let c = random_image(4, 4, 808);
    let k = GaussianKernel::new(1.5).unwrap();
    let (v, g) = faithfulness_loss(&x, &c, 3, &k).unwrap();
    let h = 1e-3 * v.abs().max(1.0);
    let mut data = x.as_slice().to_vec();
    check_elementwise(&mut data, g.as_slice(), 1, h, |d| {
        let probe = Image::from_vec(12, 12, d.to_vec()).unwrap();
        faithfulness_loss(&probe, &c, 3, &k).unwrap().0
    })
}

/// Injected-cotangent featurenet check; `flip_kernels = false` deliberately
/// corrupts the conv backward to prove the harness detects it.
fn featurenet_check(deep: bool, flip_kernels: bool) -> f64 {
    let (net_seed, img_seed, size, layer): (u64, u64, usize, &str) = if deep {
        (16, 11, 16, "pool3")
    } else {
        (25, 25, 6, "conv1_1")
    };
    let net = Network::<f64>::random(net_seed);
    let img = random_image(size, size, img_seed);
    let acts = net.forward(&img, layer).unwrap();
    let mut cot = Vec::new();
    let names: &[&str] = if deep {
        &["conv1_1", "pool1", "pool2", "pool3"]
    } else {
        &["conv1_1"]
    };
    for (i, name) in names.iter().enumerate() {
        let fm = acts.get(name).unwrap();
        cot.push((
            name.to_string(),
            random_map(fm.channels, fm.height, fm.width, 820 + i as u64),
        ));
    }
    let analytic = net.backward_opts(&acts, &cot, flip_kernels).unwrap();
    let objective = |probe: &Image<f64>| -> f64 {
        let acts = net.forward(probe, layer).unwrap();
        cot.iter()
            .map(|(name, g)| {
                let fm = acts.get(name).unwrap();
                fm.data.iter().zip(&g.data).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    };
    let mut rng = Rng64::new(55);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let d: Vec<f64> = (0..size * size).map(|_| rng.next_f64() - 0.5).collect();
        let probe = |s: f64| {
            let p = Image::from_fn(size, size, |y, x| img.at(y, x) + s * d[y * size + x]);
            objective(&p)
        };
        let fd = (probe(h) - probe(-h)) / (2.0 * h);
        let dot: f64 = analytic.as_slice().iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(fd, dot));
    }
    worst
}

/// Directional derivative check of the assembled objective in one mode.
fn objective_check(mode: Mode, seed: u64) -> f64 {
    let net = Network::<f64>::random(900 + seed);
    let style = random_image(16, 16, 901 + seed);
    let style_layers: Vec<(String, f64)> = ["conv1_1", "pool1", "pool2", "pool3"]
        .iter()
        .map(|n| (n.to_string(), 1.0))
        .collect();
    let half = Image::<f64>::from_fn(16, 16, |y, _| (y < 10) as u64 as f64);
    let rest = Image::<f64>::from_fn(16, 16, |y, _| (y >= 4) as u64 as f64);
    let cfg = ObjectiveConfig::<f64> {
        mode,
        alpha: 10.0,
        beta: 5.0,
        style_layers,
        content_layer: "conv3_2".to_string(),
        factor: 2,
        kernel: GaussianKernel::new(1.0).unwrap(),
        mask_set: match mode {
            Mode::SrLocal => Some(MaskSet {
                pairs: vec![
                    MaskPair {
                        x: half.clone(),
                        s: half,
                    },
                    MaskPair {
                        x: rest.clone(),
                        s: rest,
                    },
                ],
                provenance: MaskProvenance::Manual,
            }),
            _ => None,
        },
        style_image: style,
        input_image: Some(match mode {
            Mode::Transfer => random_image(16, 16, 903 + seed),
            _ => random_image(8, 8, 903 + seed),
        }),
        out_size: None,
        init: LatentInit::BicubicOfInput { noise_std: 0.0 },
        seed,
    };
    let objective = Objective::new(&net, cfg).unwrap();
    let x = random_image(16, 16, 905 + seed);
    let (_, analytic) = objective.evaluate(&x).unwrap();

    let mut rng = Rng64::new(777 + seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let d: Vec<f64> = (0..256).map(|_| rng.next_f64() - 0.5).collect();
        let probe = |s: f64| {
            let p = Image::from_fn(16, 16, |py, px| x.at(py, px) + s * d[py * 16 + px]);
            objective.evaluate(&p).unwrap().0.total
        };
        let fd = (probe(h) - probe(-h)) / (2.0 * h);
        let dot: f64 = analytic.as_slice().iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(fd, dot));
    }
    worst
}

/// Run the full suite. `sabotage` corrupts the conv kernel flip in the two
/// featurenet checks and must make the suite fail.
pub fn run_suite(sabotage: bool) -> CheckReport {
    let flip = !sabotage;
    let checks = vec![
        CheckResult {
            name: "content loss (L2 in feature space)",
            max_rel_error: content_check(),
            tolerance: TOL,
        },
        CheckResult {
            name: "style loss (Gram Frobenius)",
            max_rel_error: style_check(),
            tolerance: TOL,
        },
        CheckResult {
            name: "masked style loss (two overlapping pairs)",
            max_rel_error: masked_style_check(),
            tolerance: TOL,
        },
        CheckResult {
            name: "faithfulness loss (blur-downsample adjoint)",
            max_rel_error: faithfulness_check(),
            tolerance: TOL,
        },
        CheckResult {
            name: "featurenet backward (single conv layer)",
            max_rel_error: featurenet_check(false, flip),
            tolerance: TOL,
        },
        CheckResult {
            name: "featurenet backward (trunk to pool3)",
            max_rel_error: featurenet_check(true, flip),
            tolerance: TOL,
        },
        CheckResult {
            name: "objective gradient (transfer mode)",
            max_rel_error: objective_check(Mode::Transfer, 0),
            tolerance: TOL,
        },
        CheckResult {
            name: "objective gradient (sr_global mode)",
            max_rel_error: objective_check(Mode::SrGlobal, 0),
            tolerance: TOL,
        },
        CheckResult {
            name: "objective gradient (sr_local mode)",
            max_rel_error: objective_check(Mode::SrLocal, 0),
            tolerance: TOL,
        },
    ];
    CheckReport { checks }
}
