//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs no generated glue beyond `wasm-bindgen`'s.

use samlab_core::attacks::{pgd, robust_accuracy, AttackBudget};
use samlab_core::data::{sample_mixture2d, Blob};
use samlab_core::models::{accuracy, Activation, MlpModel};
use samlab_core::optim::{plain_step, sam_step, BaseOptimizer, OptimizerState, SamConfig, SgdConfig};
use samlab_core::rng::{derive_seed, streams, SeedStream};
use samlab_core::tensor::Tensor;
use samlab_core::theory::{adv_accuracy, clean_accuracy, wr_at, wr_sam_approx, wr_sam_numeric, wr_standard, FeatureModelSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Curves {
    w: Vec<f64>,
    clean: Vec<f64>,
    adv: Vec<f64>,
    w_star: f64,
    w_at: f64,
    w_sam: f64,
}

#[derive(Serialize)]
struct WeightsVsEps {
    eps: Vec<f64>,
    wr_star: f64,
    /// `None` where `eps >= eta`.
    wr_at: Vec<Option<f64>>,
    wr_sam: Vec<f64>,
    wr_sam_approx: Vec<f64>,
}

#[derive(Serialize)]
struct Trained {
    points: Vec<[f64; 3]>,
    /// Probability of class 1 on a `size` by `size` grid, row-major from the top.
    grid: Vec<f64>,
    size: usize,
    extent: f64,
    clean_accuracy: f64,
    robust_accuracy: f64,
}

fn json<T: Serialize>(v: &Result<T, String>) -> String {
    match v {
        Ok(v) => serde_json::to_string(v).expect("serializable"),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

fn spec(p: f64, eta: f64, n: u32) -> Result<FeatureModelSpec, String> {
    FeatureModelSpec::new(p, eta, n as usize).map_err(|e| e.to_string())
}

/// Clean and adversarial accuracy of the linear classifier as a function of
/// the robust weight, over `[0, 3 w1*]`.
pub fn accuracy_curves(p: f64, eta: f64, n: u32, eps: f64, points: u32) -> String {
    let run = || -> Result<Curves, String> {
        let s = spec(p, eta, n)?;
        let e = |e: samlab_core::Error| e.to_string();
        let w_star = wr_standard(&s).map_err(e)?.w1;
        let w_at = wr_at(&s, eps).map_err(e)?.w1;
        let w_sam = wr_sam_numeric(&s, eps).map_err(e)?.weight.w1;
        let hi = 3.0 * w_star.max(w_at);
        let k = points.max(2) as usize;
        let w: Vec<f64> = (0..k).map(|i| hi * i as f64 / (k - 1) as f64).collect();
        let clean = w.iter().map(|&v| clean_accuracy(v, &s)).collect::<Result<_, _>>().map_err(e)?;
        let adv = w.iter().map(|&v| adv_accuracy(v, &s, eps)).collect::<Result<_, _>>().map_err(e)?;
        Ok(Curves {
            w,
            clean,
            adv,
            w_star,
            w_at,
            w_sam,
        })
    };
    json(&run())
}

/// Robust feature weights of standard, adversarial and sharpness-aware
/// training for `eps` in `[0, eps_max]`.
pub fn weights_vs_eps(p: f64, eta: f64, n: u32, eps_max: f64, points: u32) -> String {
    let run = || -> Result<WeightsVsEps, String> {
        let s = spec(p, eta, n)?;
        let e = |e: samlab_core::Error| e.to_string();
        if !(eps_max > 0.0 && eps_max.is_finite()) {
            return Err(format!("eps_max = {eps_max} must be positive"));
        }
        let k = points.max(2) as usize;
        let eps: Vec<f64> = (0..k).map(|i| eps_max * i as f64 / (k - 1) as f64).collect();
        let mut out = WeightsVsEps {
            eps: eps.clone(),
            wr_star: wr_standard(&s).map_err(e)?.wr,
            wr_at: Vec::new(),
            wr_sam: Vec::new(),
            wr_sam_approx: Vec::new(),
        };
        for &v in &eps {
            out.wr_at.push(wr_at(&s, v).ok().map(|r| r.wr));
            out.wr_sam.push(wr_sam_numeric(&s, v).map_err(e)?.weight.wr);
            out.wr_sam_approx.push(wr_sam_approx(&s, v).map_err(e)?);
        }
        Ok(out)
    };
    json(&run())
}

/// Trains a 2-16-16-2 MLP on a two-blob mixture and returns its decision map.
/// `mode` is `plain`, `sam` or `adversarial`; `radius` is `rho` for SAM and
/// the ℓ∞ budget for adversarial training. Robust accuracy uses a 10-step ℓ∞
/// attack with budget `eval_eps`.
pub fn train_mixture(mode: &str, radius: f64, eval_eps: f64, epochs: u32, seed: u64) -> String {
    let run = || -> Result<Trained, String> {
        let e = |e: samlab_core::Error| e.to_string();
        let blobs = [
            Blob { center: [1.0, 0.5], class: 1 },
            Blob { center: [-1.0, -0.5], class: 0 },
        ];
        let train = sample_mixture2d(&blobs, 0.7, 200, derive_seed(seed, 0)).map_err(e)?;
        let test = sample_mixture2d(&blobs, 0.7, 1000, derive_seed(seed, 1)).map_err(e)?;
        let mut model = MlpModel::init(&[2, 16, 16, 2], Activation::Relu, derive_seed(seed, 2)).map_err(e)?;
        let base = BaseOptimizer::Sgd(SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
        });
        let sam = SamConfig::new(radius, base);
        let inner = AttackBudget::linf(radius, 5);
        let mut state = OptimizerState::for_base(&base);
        let classes = train.classes();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = SeedStream::new(derive_seed(seed, 3), streams::SHUFFLE);
        for epoch in 0..epochs as usize {
            rng.shuffle(&mut order);
            for (b, chunk) in order.chunks(16).enumerate() {
                let (x, _) = train.select(chunk).map_err(e)?;
                let y: Vec<usize> = chunk.iter().map(|&i| classes[i]).collect();
                match mode {
                    "plain" => {
                        plain_step(&mut model, &x, &y, &base, &mut state).map_err(e)?;
                    }
                    "sam" => {
                        sam_step(&mut model, &x, &y, &sam, &mut state).map_err(e)?;
                    }
                    "adversarial" => {
                        let s = derive_seed(seed, (epoch * 1000 + b) as u64);
                        let adv = pgd(&model, &x, &y, &inner, s).map_err(e)?;
                        plain_step(&mut model, &adv.x_adv, &y, &base, &mut state).map_err(e)?;
                    }
                    other => return Err(format!("unknown mode `{other}`")),
                }
            }
        }
        let size = 48;
        let extent = 3.0;
        let mut cells = Vec::with_capacity(size * size * 2);
        for r in 0..size {
            for c in 0..size {
                let x = -extent + 2.0 * extent * (c as f64 + 0.5) / size as f64;
                let y = extent - 2.0 * extent * (r as f64 + 0.5) / size as f64;
                cells.extend([x, y]);
            }
        }
        let logits = model.logits(&Tensor::matrix(size * size, 2, cells).map_err(e)?).map_err(e)?;
        let grid = (0..size * size)
            .map(|i| {
                let l = logits.row(i);
                1.0 / (1.0 + (l[0] - l[1]).exp())
            })
            .collect();
        let points = (0..train.len())
            .map(|i| {
                let r = train.x.row(i);
                [r[0], r[1], classes[i] as f64]
            })
            .collect();
        Ok(Trained {
            points,
            grid,
            size,
            extent,
            clean_accuracy: accuracy(&model, &test.x, &test.classes()).map_err(e)?,
            robust_accuracy: robust_accuracy(&model, &test, &AttackBudget::linf(eval_eps, 10), derive_seed(seed, 4))
                .map_err(e)?,
        })
    };
    json(&run())
}

#[wasm_bindgen(js_name = accuracyCurves)]
pub fn accuracy_curves_js(p: f64, eta: f64, n: u32, eps: f64, points: u32) -> String {
    accuracy_curves(p, eta, n, eps, points)
}

#[wasm_bindgen(js_name = weightsVsEps)]
pub fn weights_vs_eps_js(p: f64, eta: f64, n: u32, eps_max: f64, points: u32) -> String {
    weights_vs_eps(p, eta, n, eps_max, points)
}

#[wasm_bindgen(js_name = trainMixture)]
pub fn train_mixture_js(mode: &str, radius: f64, eval_eps: f64, epochs: u32, seed: u32) -> String {
    train_mixture(mode, radius, eval_eps, epochs, seed as u64)
}
