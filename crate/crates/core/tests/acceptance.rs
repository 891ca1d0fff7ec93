//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 9 and 10 need the six desk-scale models. They are loaded from
//! the cache written by `cargo run --release --example desk_experiment`
//! (or trained here when missing, which takes hours on one core).

use std::time::Instant;

use autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uncodec::config::Config;
use uncodec::ensemble::{mixture_mean, mixture_variance, EnsemblePrediction, PredictionKind};
use uncodec::evaluation::{bd_rate, CubicFit, RdCurve, RdPoint};
use uncodec::frames::{Frame, GopStructure};
use uncodec::losses::{ensemble_aware_loss, ClipMode};
use uncodec::motion::warp;
use uncodec::pipeline::{decode_sequence, encode_sequence, model_size_report, CodecModel, SequenceBitstream};
use uncodec::synthetic::{generate, MovingShapesConfig};
use uncodec::training::{
    cache_key, default_cache_dir, desk_config, desk_run_config, heldout_rd_loss, load_or_train, Trainer, TrainingData, DESK_H,
    DESK_SEEDS,
};
use uncodec::transform_coding::{
    entropy_decode, entropy_encode, estimate_bits, quantize_infer, round_half_away, uniform_noise_for, EntropyCoder,
    EntropyModel, FactorizedPrior, LaplaceModel, LatentCode, QuantizedCode, StreamKind,
};
use uncodec::uncertainty_viz::model_predictive_map;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, name, pass, detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32, var: bool) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    if var {
        Tensor::var(data, shape)
    } else {
        Tensor::new(data, shape)
    }
}

/// Per-pixel enumeration: channel-mean errors, k-th smallest, clipped sum.
fn brute_force_ea(x: &Tensor, preds: &[Tensor], k: usize) -> f64 {
    let (_, c, h, w) = x.dims4();
    let n = x.dims4().0;
    let pixels = n * h * w;
    let mut total = 0.0;
    for b in 0..n {
        for p in 0..h * w {
            let errs: Vec<f64> = preds
                .iter()
                .map(|m| {
                    (0..c)
                        .map(|ch| {
                            let i = (b * c + ch) * h * w + p;
                            (m.data()[i] as f64 - x.data()[i] as f64).powi(2)
                        })
                        .sum::<f64>()
                        / c as f64
                })
                .collect();
            let mut sorted = errs.clone();
            sorted.sort_by(f64::total_cmp);
            let pivot = sorted[k - 1];
            total += errs.iter().map(|e| e.min(pivot)).sum::<f64>();
        }
    }
    total / pixels as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let h = [1, 2, 3, 4, 8][i % 5];
        let k = rng.random_range(1..=h);
        let shape = [rng.random_range(1..3), rng.random_range(1..4), rng.random_range(2..9), rng.random_range(2..9)];
        let x = random_tensor(&mut rng, &shape, 0.0, 1.0, false);
        let preds: Vec<Tensor> = (0..h).map(|_| random_tensor(&mut rng, &shape, 0.0, 1.0, false)).collect();
        let got = ensemble_aware_loss(&x, &preds, k, ClipMode::RouteToKth).unwrap().item() as f64;
        worst = worst.max(rel_err(got, brute_force_ea(&x, &preds, k)));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "ensemble-aware loss oracle",
        worst <= 1e-6 && secs < 10.0,
        format!("200 instances, max rel err {worst:.2e}, {secs:.2}s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_analytic, mut worst_fd) = (0.0f64, 0.0f64);
    let mut leaked = 0usize;
    let mut cases = 0;
    while cases < 50 {
        let h = rng.random_range(2..=5);
        let k = rng.random_range(1..=h);
        let x = random_tensor(&mut rng, &[1, 1, 3, 3], 0.0, 1.0, false);
        let preds: Vec<Tensor> = (0..h).map(|_| random_tensor(&mut rng, &[1, 1, 3, 3], 0.0, 1.0, true)).collect();
        // Keep order statistics away from ties so finite differences stay on one branch.
        let separated = (0..9).all(|p| {
            let mut e: Vec<f64> = preds.iter().map(|m| (m.data()[p] - x.data()[p]).powi(2) as f64).collect();
            e.sort_by(f64::total_cmp);
            e.windows(2).all(|w| w[1] - w[0] > 1e-3)
        });
        if !separated {
            continue;
        }
        cases += 1;
        let g = ensemble_aware_loss(&x, &preds, k, ClipMode::RouteToKth).unwrap().backward();
        for p in 0..9 {
            let errs: Vec<f64> = preds.iter().map(|m| (m.data()[p] - x.data()[p]).powi(2) as f64).collect();
            let mut order: Vec<usize> = (0..h).collect();
            order.sort_by(|&a, &b| errs[a].total_cmp(&errs[b]));
            let kth = order[k - 1];
            let clipped = (0..h).filter(|&m| errs[m] > errs[kth]).count();
            for (m, pred) in preds.iter().enumerate() {
                let residual = 2.0 * (pred.data()[p] - x.data()[p]) as f64 / 9.0;
                let analytic = if m == kth {
                    residual * (1 + clipped) as f64
                } else if errs[m] > errs[kth] {
                    0.0
                } else {
                    residual
                };
                let auto = g.get_or_zeros(pred)[p] as f64;
                if errs[m] > errs[kth] && auto != 0.0 {
                    leaked += 1;
                }
                worst_analytic = worst_analytic.max((auto - analytic).abs());
                let step = 1e-4;
                let shifted = |d: f64| {
                    let moved: Vec<Tensor> = preds
                        .iter()
                        .enumerate()
                        .map(|(j, t)| {
                            let mut v = t.to_vec();
                            if j == m {
                                v[p] = (v[p] as f64 + d) as f32;
                            }
                            Tensor::new(v, t.shape())
                        })
                        .collect();
                    brute_force_ea(&x, &moved, k)
                };
                let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
                if analytic.abs() > 1e-6 {
                    worst_fd = worst_fd.max(rel_err(fd, auto));
                } else {
                    worst_fd = worst_fd.max(fd.abs().min(1.0));
                }
            }
        }
    }
    report(
        2,
        "gradient routing",
        worst_analytic <= 1e-5 && leaked == 0 && worst_fd <= 1e-3,
        format!(
            "50 cases; analytic vs autodiff max abs {worst_analytic:.1e}; clipped nonzero grads {leaked}; finite-difference max rel {worst_fd:.1e}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let h = rng.random_range(1..=8);
        let members: Vec<Tensor> = (0..h).map(|_| random_tensor(&mut rng, &[1, 2, 4, 4], -3.0, 3.0, false)).collect();
        let pred = EnsemblePrediction::new(PredictionKind::Mv, members.clone()).unwrap();
        let (mean, var) = (mixture_mean(&pred), mixture_variance(&pred));
        for i in 0..32 {
            let mu = members.iter().map(|m| m.data()[i] as f64).sum::<f64>() / h as f64;
            let second = members.iter().map(|m| 1.0 + (m.data()[i] as f64).powi(2)).sum::<f64>() / h as f64;
            worst = worst.max((mean.data()[i] as f64 - mu).abs());
            worst = worst.max(rel_err(var.data()[i] as f64, second - mu * mu));
        }
    }
    let same = random_tensor(&mut rng, &[1, 2, 4, 4], -3.0, 3.0, false);
    let ident = EnsemblePrediction::new(PredictionKind::Mv, vec![same; 4]).unwrap();
    let unit = mixture_variance(&ident).data().iter().all(|&v| v == 1.0);
    report(
        3,
        "mixture statistics",
        worst <= 1e-6 && unit,
        format!("100 random ensembles, max err {worst:.1e}; identical members give variance exactly 1: {unit}"),
    )
}

fn warp_oracle(reference: &[f64], flow: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let tap = |coord: f64, n: usize| {
        let f = coord.floor();
        let clamp = |i: f64| i.clamp(0.0, n as f64 - 1.0) as usize;
        (clamp(f), clamp(f + 1.0), coord - f)
    };
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (x0, x1, fx) = tap(x as f64 + flow[p], w);
            let (y0, y1, fy) = tap(y as f64 + flow[h * w + p], h);
            for ch in 0..c {
                let v = |yy: usize, xx: usize| reference[(ch * h + yy) * w + xx];
                out[ch * h * w + p] =
                    (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1));
            }
        }
    }
    out
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (c, h, w) = (3, 7, 9);
    let reference = random_tensor(&mut rng, &[1, c, h, w], 0.0, 1.0, false);
    let identity = warp(&reference, &Tensor::zeros(&[1, 2, h, w])).data() == reference.data();
    let mut shift_ok = true;
    for (dx, dy) in [(1i32, 0i32), (-2, 1), (3, -3), (0, 5), (-9, 2)] {
        let mut flow = vec![dx as f32; h * w];
        flow.extend(vec![dy as f32; h * w]);
        let out = warp(&reference, &Tensor::new(flow, &[1, 2, h, w]));
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                    let sx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                    if out.data()[(ch * h + y) * w + x] != reference.data()[(ch * h + sy) * w + sx] {
                        shift_ok = false;
                    }
                }
            }
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let r = random_tensor(&mut rng, &[1, c, h, w], 0.0, 1.0, true);
        // Fractional parts away from integers keep the bilinear weights on one cell.
        let fl: Vec<f32> = (0..2 * h * w)
            .map(|_| rng.random_range(-3i32..3) as f32 + rng.random_range(0.1f32..0.9))
            .collect();
        let flow = Tensor::var(fl.clone(), &[1, 2, h, w]);
        let weights: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wt = Tensor::new(weights.iter().map(|&v| v as f32).collect(), &[1, c, h, w]);
        let g = warp(&r, &flow).mul(&wt).sum_all().backward();
        let objective = |rv: &[f64], fv: &[f64]| -> f64 {
            warp_oracle(rv, fv, c, h, w).iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let r64: Vec<f64> = r.data().iter().map(|&v| v as f64).collect();
        let f64s: Vec<f64> = fl.iter().map(|&v| v as f64).collect();
        let step = 1e-4;
        let (mut num, mut den) = (0.0, 0.0);
        let gf = g.get_or_zeros(&flow);
        for i in 0..f64s.len() {
            let (mut a, mut b) = (f64s.clone(), f64s.clone());
            a[i] += step;
            b[i] -= step;
            let fd = (objective(&r64, &a) - objective(&r64, &b)) / (2.0 * step);
            num += (fd - gf[i] as f64).powi(2);
            den += fd * fd;
        }
        let gr = g.get_or_zeros(&r);
        for i in 0..r64.len() {
            let (mut a, mut b) = (r64.clone(), r64.clone());
            a[i] += step;
            b[i] -= step;
            let fd = (objective(&a, &f64s) - objective(&b, &f64s)) / (2.0 * step);
            num += (fd - gr[i] as f64).powi(2);
            den += fd * fd;
        }
        worst = worst.max((num / den.max(1e-30)).sqrt());
    }
    report(
        4,
        "warp correctness",
        identity && shift_ok && worst <= 1e-3,
        format!("zero flow identity {identity}; integer shifts exact {shift_ok}; 20 gradient checks, max rel {worst:.1e}"),
    )
}

fn sample_laplace(rng: &mut ChaCha8Rng, loc: f64, scale: f64) -> f64 {
    let u: f64 = rng.random_range(-0.499999..0.499999);
    loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut inside = 0usize;
    let mut total = 0usize;
    while total < 1_000_000 {
        let base: Vec<f32> = (0..1000)
            .map(|i| match i % 3 {
                0 => 0.0,
                1 => rng.random_range(-4.0..4.0),
                _ => rng.random_range(-3000.0..3000.0),
            })
            .collect();
        let noise = uniform_noise_for(&base, &mut rng);
        inside += base
            .iter()
            .zip(&noise)
            .filter(|(b, n)| {
                let moved = (**b + **n) - **b;
                moved > -0.5 && moved < 0.5
            })
            .count();
        total += base.len();
    }
    let latent: Vec<f32> = (0..4096).map(|_| rng.random_range(-50.0..50.0)).collect();
    let once = quantize_infer(&LatentCode::new(StreamKind::Residual, [4, 32, 32], latent).unwrap()).unwrap();
    let twice = quantize_infer(&LatentCode::new(StreamKind::Residual, [4, 32, 32], once.as_f32()).unwrap()).unwrap();
    let idempotent = once == twice;

    let mut lossless = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut params = autograd::Params::new();
    let prior = FactorizedPrior::new(&mut params, "prior", 6, 1e-9, &mut rng);
    let factorized = prior.snapshot(&params);
    for case in 0..100 {
        let use_factorized = case % 4 == 3;
        let channels = if use_factorized { factorized.channels() } else { rng.random_range(1..=6) };
        let (h, w) = if case % 2 == 0 { (rng.random_range(1..17), rng.random_range(1..17)) } else { (rng.random_range(16..65), rng.random_range(16..65)) };
        let locs: Vec<f64> = (0..channels).map(|_| rng.random_range(-2.0..2.0)).collect();
        let scales: Vec<f64> = (0..channels).map(|_| rng.random_range(0.2..8.0)).collect();
        let laplace = LaplaceModel::new(locs.clone(), scales.clone(), 1e-9);
        let values: Vec<i32> = (0..channels * h * w)
            .map(|i| {
                let ch = i / (h * w);
                if use_factorized {
                    rng.random_range(-3..=3)
                } else {
                    round_half_away(sample_laplace(&mut rng, locs[ch], scales[ch]) as f32) as i32
                }
            })
            .collect();
        let model: &dyn EntropyModel = if use_factorized { &factorized } else { &laplace };
        let coder = EntropyCoder::new(model, 77);
        let code = QuantizedCode::new(StreamKind::Mv, [channels, h, w], values).unwrap();
        let bs = entropy_encode(&code, &coder).unwrap();
        if entropy_decode(&bs, &coder).unwrap() == code {
            lossless += 1;
        }
        let est_bytes = estimate_bits(&code.as_f32(), [channels, h, w], model).unwrap() / 8.0;
        let real = bs.to_bytes().len() as f64;
        worst_excess = worst_excess.max((real - est_bytes).abs() - (0.02 * est_bytes + 64.0));
    }
    report(
        5,
        "quantization and entropy coding",
        inside == total && idempotent && lossless == 100 && worst_excess <= 0.0,
        format!(
            "{inside}/{total} noises inside (-0.5, 0.5); idempotent {idempotent}; {lossless}/100 lossless; worst slack beyond 2%+64B: {worst_excess:.1} bytes"
        ),
    )
}

fn tiny_config() -> Config {
    let mut c = Config::default();
    c.apply_overrides(&[
        "codec.h=2",
        "codec.latent_channels_mv=4",
        "codec.latent_channels_res=6",
        "codec.hidden_channels=6",
        "codec.backbone_channels=6",
        "codec.branch_channels=4",
        "codec.motion_channels=4",
        "codec.motion_levels=2",
        "codec.refine_channels=6",
        "data.crop=16",
        "train.batch=2",
        "train.warmup_steps=1",
        "train.total_steps=3",
        "train.out_dir=",
        "train.lr_initial=1e-3",
    ])
    .unwrap();
    c
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let eps = 4.0f32 / 255.0;
    let x: Vec<f32> = (0..10_000).map(|_| rng.random_range(eps..1.0 - eps)).collect();
    let g: Vec<f32> = (0..10_000)
        .map(|i| if i % 7 == 0 { 0.0 } else { rng.random_range(-1.0..1.0) })
        .collect();
    let out = uncodec::adversarial::fgsm_perturb_values(&x, &g, eps);
    let exact = x
        .iter()
        .zip(&out)
        .zip(&g)
        .all(|((&a, &b), &gi)| if gi == 0.0 { b == a } else { b == a + eps || b == a - eps });

    let run = |enabled: bool| {
        let cfg = tiny_config()
            .with("fgsm.enabled", enabled)
            .unwrap()
            .with("fgsm.epsilon", 0.0)
            .unwrap();
        let data = TrainingData::from_config(&cfg).unwrap();
        let mut t = Trainer::from_config(&cfg).unwrap();
        let losses: Vec<f64> = (0..3).map(|_| t.train_step(&data).unwrap().total).collect();
        let params: Vec<Vec<f32>> = t.model.params.ids().map(|id| t.model.params.value(id).to_vec()).collect();
        (losses, params, t.counters)
    };
    let (la, pa, ca) = run(true);
    let (lb, pb, cb) = run(false);
    let bitwise = la.iter().zip(&lb).all(|(a, b)| a.to_bits() == b.to_bits())
        && pa.iter().zip(&pb).all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    report(
        6,
        "FGSM",
        exact && bitwise,
        format!(
            "10000 values moved by exactly 0 or eps: {exact}; eps=0 vs plain, 3 steps bitwise equal: {bitwise} (forwards {} vs {})",
            ca.forwards, cb.forwards
        ),
    )
}

fn criterion_7() -> Outcome {
    let model = CodecModel::new(&tiny_config()).unwrap();
    let clip = generate(&MovingShapesConfig {
        height: 40,
        width: 56,
        frames: 10,
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let gop = GopStructure::new(10, 10).unwrap();
    let mut all_equal = true;
    let mut first: Option<Vec<Frame>> = None;
    for _ in 0..3 {
        let enc = encode_sequence(&clip.sequence, &gop, &model).unwrap();
        let bytes = enc.bitstream.to_bytes();
        let dec = decode_sequence(&SequenceBitstream::parse(&bytes).unwrap(), &model).unwrap();
        let bitwise = dec
            .frames()
            .iter()
            .zip(&enc.reconstructions)
            .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        all_equal &= bitwise && dec.len() == 10;
        match &first {
            None => first = Some(enc.reconstructions.clone()),
            Some(f) => all_equal &= f == &enc.reconstructions,
        }
    }
    report(
        7,
        "closed-loop codec",
        all_equal,
        format!("10-frame 40x56 clip, 3 runs, decoder equals encoder bitwise: {all_equal}"),
    )
}

fn trapezoid_bd(test: &RdCurve, anchor: &RdCurve) -> f64 {
    let lo = test.points[0].psnr_db.max(anchor.points[0].psnr_db);
    let hi = test.points.last().unwrap().psnr_db.min(anchor.points.last().unwrap().psnr_db);
    // Independent normal-equation fit in centered coordinates.
    let fit = |c: &RdCurve| {
        let center = c.points.iter().map(|p| p.psnr_db).sum::<f64>() / c.points.len() as f64;
        let mut a = [[0.0f64; 5]; 4];
        for p in &c.points {
            let t = p.psnr_db - center;
            let basis = [1.0, t, t * t, t * t * t];
            for r in 0..4 {
                for q in 0..4 {
                    a[r][q] += basis[r] * basis[q];
                }
                a[r][4] += basis[r] * p.bpp.log10();
            }
        }
        for col in 0..4 {
            let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..4 {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for q in col..5 {
                        a[r][q] -= f * a[col][q];
                    }
                }
            }
        }
        let coef: Vec<f64> = (0..4).map(|r| a[r][4] / a[r][r]).collect();
        move |psnr: f64| {
            let t = psnr - center;
            coef[0] + t * (coef[1] + t * (coef[2] + t * coef[3]))
        }
    };
    let (ft, fa) = (fit(test), fit(anchor));
    let n = 10_000;
    let dx = (hi - lo) / n as f64;
    let mut sum = 0.0;
    for i in 0..=n {
        let x = lo + i as f64 * dx;
        let wgt = if i == 0 || i == n { 0.5 } else { 1.0 };
        sum += wgt * (ft(x) - fa(x));
    }
    (10f64.powf(sum * dx / (hi - lo)) - 1.0) * 100.0
}

fn random_curve(rng: &mut ChaCha8Rng, label: &str) -> RdCurve {
    let mut bpp = rng.random_range(0.02..0.1);
    let mut psnr = rng.random_range(26.0..30.0);
    let points = (0..4)
        .map(|i| {
            if i > 0 {
                bpp *= rng.random_range(1.3..2.2);
                psnr += rng.random_range(0.8..2.5);
            }
            RdPoint {
                lambda: 256.0 * (1 << i) as f64,
                bpp,
                psnr_db: psnr,
            }
        })
        .collect();
    RdCurve::new(label, points).unwrap()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_curve(&mut rng, "a");
    let self_zero = bd_rate(&a, &a).unwrap() == 0.0;
    let halved = RdCurve::new(
        "half",
        a.points
            .iter()
            .map(|p| RdPoint {
                bpp: p.bpp * 0.5,
                ..*p
            })
            .collect(),
    )
    .unwrap();
    let half = bd_rate(&halved, &a).unwrap();
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 200 {
        let (t, b) = (random_curve(&mut rng, "t"), random_curve(&mut rng, "b"));
        let Ok(got) = bd_rate(&t, &b) else { continue };
        n += 1;
        let oracle = trapezoid_bd(&t, &b);
        worst = worst.max((got - oracle).abs() / oracle.abs().max(1.0));
        let _ = CubicFit::fit(&t).unwrap();
    }
    report(
        8,
        "BD-rate oracle",
        self_zero && (half + 50.0).abs() <= 0.01 && worst <= 1e-3,
        format!("bd(A,A)=0 exactly: {self_zero}; halved rates {half:.6}%; 200 random pairs, max rel dev from trapezoid oracle {worst:.1e}"),
    )
}

fn desk_models() -> Vec<(usize, u64, CodecModel)> {
    let cache = default_cache_dir();
    let mut out = Vec::new();
    for seed in DESK_SEEDS {
        for h in DESK_H {
            let cfg = desk_run_config(h, seed).unwrap();
            let model = load_or_train(&cfg, &cache, |_| {}).unwrap();
            out.push((h, seed, model));
        }
    }
    out
}

fn training_ema(h: usize, seed: u64) -> (f64, f64) {
    let cfg = desk_run_config(h, seed).unwrap();
    let text = std::fs::read_to_string(default_cache_dir().join(cache_key(&cfg)).join("summary.txt")).unwrap_or_default();
    let field = |k: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(k).and_then(|v| v.strip_prefix('=')))
            .and_then(|v| v.parse().ok())
            .unwrap_or(f64::NAN)
    };
    (field("ema_at_warmup"), field("ema_final"))
}

fn criterion_9(models: &[(usize, u64, CodecModel)]) -> Outcome {
    let held = TrainingData::from_config(&desk_config()).unwrap().heldout(64, 32).unwrap();
    let mut per = Vec::new();
    for (h, seed, m) in models {
        let r = heldout_rd_loss(m, &held, 1024.0).unwrap();
        per.push((*h, *seed, r.rd_loss));
    }
    let mean = |h: usize| {
        let v: Vec<f64> = per.iter().filter(|p| p.0 == h).map(|p| p.2).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (m1, m4) = (mean(1), mean(4));
    let list = per
        .iter()
        .map(|(h, s, l)| format!("h{h}/s{s}={l:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    let emas: Vec<(f64, f64)> = per.iter().map(|&(h, s, _)| training_ema(h, s)).collect();
    let ema_list = per
        .iter()
        .zip(&emas)
        .map(|((h, s, _), (w, f))| format!("h{h}/s{s} {w:.3}->{f:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    report(
        9,
        "desk-scale ensemble benefit",
        m4 <= m1,
        format!(
            "mean held-out RD loss h=1 {m1:.4}, h=4 {m4:.4}, delta {:+.4} ({:+.2}%); {list}; training-loss EMA warm-up end->final {ema_list} (all lower: {})",
            m4 - m1,
            (m4 - m1) / m1 * 100.0,
            emas.iter().all(|(w, f)| f < w)
        ),
    )
}

fn criterion_10(models: &[(usize, u64, CodecModel)]) -> Outcome {
    let size = 64;
    let clip = generate(&MovingShapesConfig {
        height: size,
        width: size,
        frames: 2,
        shapes: 1,
        max_speed: 3.0,
        min_size: 0.3,
        max_size: 0.3,
        seed: 10,
    })
    .unwrap();
    let track = &clip.tracks[0];
    let frames = clip.sequence.frames();
    // Chebyshev distance from a pixel to the square's outline at time t.
    let dist = |t: usize, y: usize, x: usize| {
        let (top, left) = track.position(t);
        let (cy, cx) = (y as f32 + 0.5, x as f32 + 0.5);
        let inside_y = (cy - top).min(top + track.height - cy);
        let inside_x = (cx - left).min(left + track.width - cx);
        if inside_y >= 0.0 && inside_x >= 0.0 {
            inside_y.min(inside_x)
        } else {
            (-inside_y).max(-inside_x)
        }
    };
    let band: Vec<bool> = (0..size * size).map(|i| dist(1, i / size, i % size) <= 2.0).collect();
    let background: Vec<bool> = (0..size * size)
        .map(|i| {
            let (y, x) = (i / size, i % size);
            [0, 1].iter().all(|&t| !track.contains(t, y, x) && dist(t, y, x) > 4.0)
        })
        .collect();
    let mut lines = Vec::new();
    let mut all = true;
    for (h, seed, m) in models.iter().filter(|m| m.0 == 4) {
        let map = model_predictive_map(m, &frames[1], &frames[0], false).unwrap();
        let (b, g) = (map.masked_mean(&band).unwrap(), map.masked_mean(&background).unwrap());
        all &= b > g;
        lines.push(format!("h{h}/s{seed}: band {b:.3e} vs background {g:.3e}"));
    }
    report(
        10,
        "uncertainty maps",
        all && !lines.is_empty(),
        format!(
            "square velocity ({:.2}, {:.2}); {}",
            track.vx,
            track.vy,
            lines.join("; ")
        ),
    )
}

fn criterion_11() -> Outcome {
    let cfg = Config::default();
    let r1 = model_size_report(&cfg, 1).unwrap();
    let r2 = model_size_report(&cfg, 2).unwrap();
    let r8 = model_size_report(&cfg, 8).unwrap();
    let ratio = r8.total as f64 / r1.total as f64;
    let per_member = r2.total - r1.total;
    let layers_per_decoder = r1.branch_conv_layers_per_member / 2;
    report(
        11,
        "complexity accounting",
        ratio <= 1.15 && layers_per_decoder <= 2,
        format!(
            "h=1 {} params, h=8 {} params, ratio {ratio:.4}; each extra member adds {} conv layers per decoder ({} branch params, {per_member} params in total including wider refine-net inputs/outputs)",
            r1.total, r8.total, layers_per_decoder, r1.branch_params_per_member
        ),
    )
}

#[test]
fn acceptance() {
    let mut outcomes = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
    ];
    if std::env::var_os("UNCODEC_SKIP_DESK").is_some() {
        let why = "not run (UNCODEC_SKIP_DESK set)".to_string();
        outcomes.push(report(9, "desk-scale ensemble benefit", false, why.clone()));
        outcomes.push(report(10, "uncertainty maps", false, why));
    } else {
        let desk = desk_models();
        outcomes.push(criterion_9(&desk));
        outcomes.push(criterion_10(&desk));
    }
    outcomes.push(criterion_11());
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("{} {} ({})", o.id, o.name, o.detail))
        .collect();
    println!("{}/{} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
