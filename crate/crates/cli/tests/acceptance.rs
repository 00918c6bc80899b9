//! Acceptance gate: one PASS/FAIL line per primary criterion.
//! Run with `cargo test -p gesture-forge-cli --test acceptance -- --nocapture`
//! to see the lines; they are also written past the capture on success.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use num_rational::Ratio;
use rand::Rng;
use tower::ServiceExt;

use gesture_forge::dataset::{build_scenario, loso_splits, Cohort, Scenario, ScenarioSets};
use gesture_forge::experiments::{compute_metrics, generate_synthetic, ConfusionCounts, MetricSet, ScenarioReport, SyntheticSpec};
use gesture_forge::gradsuite::{run_gradient_suite, SuiteOptions};
use gesture_forge::model::{load_checkpoint, Checkpoint};
use gesture_forge::nn::{batchnorm_forward, conv2d_forward, maxpool_forward, LayerParams};
use gesture_forge::vision::{
    apply_augment, decode_image, parse_cascade_xml, to_grayscale, AugmentParams, Fill, ImageBuffer, IntegralImage,
};
use gesture_forge::Shape;
use gesture_forge_cli::commands::{cmd_loso, cmd_train, LosoArgs, TrainArgs, TrainFlags};
use gesture_forge_cli::serve::{router, AppState};
use oracles::*;

type Outcome = Result<String, String>;

fn check(f: impl FnOnce() -> String) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
    })
}

fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

fn flags(epochs: Option<usize>, seed: u64) -> TrainFlags {
    TrainFlags {
        epochs,
        batch_size: None,
        lr: None,
        momentum: None,
        seed: Some(seed),
        validation_fraction: None,
        no_augment: false,
        class_weighting: false,
    }
}

fn loso(scenarios: &[u8], data: &Path, out: &Path, train: TrainFlags) -> Vec<ScenarioReport> {
    let args = LosoArgs {
        scenario: scenarios.to_vec(),
        manifest_adults: Some(data.join("adults.json")),
        manifest_children: data.join("children.json"),
        misc_class: false,
        out: out.to_path_buf(),
        train,
    };
    cmd_loso(&args).unwrap();
    scenarios
        .iter()
        .map(|id| serde_json::from_str(&std::fs::read_to_string(out.join(format!("scenario-{id}.json"))).unwrap()).unwrap())
        .collect()
}

fn mean_of(report: &ScenarioReport, pick: fn(&gesture_forge::experiments::Aggregate) -> Option<f64>) -> f64 {
    pick(&report.aggregate).expect("metric defined on some fold")
}

fn gradient_fidelity() -> String {
    let start = Instant::now();
    let report = run_gradient_suite(&SuiteOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let worst = report.max_relative_error();
    assert!(report.passed(), "max relative error {worst:.3e}");
    assert!(report.entries.iter().any(|e| e.name.starts_with("network")));
    assert!(elapsed < Duration::from_secs(60), "{elapsed:?}");
    format!("{} probes, max rel err {worst:.2e} <= 1e-3, {:.1} s", report.entries.len(), elapsed.as_secs_f64())
}

fn kernel_oracles() -> String {
    let mut r = rng(500);
    for case in 0..100 {
        let (n, c, f) = (r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=5));
        let x = uniform(Shape::new(n, c, 8, 8), -1.0, 1.0, &mut r);
        let w = uniform(Shape::new(f, c, 3, 3), -1.0, 1.0, &mut r);
        let b: Vec<f32> = (0..f).map(|_| r.random_range(-0.5..0.5)).collect();
        let pad = case % 2;
        let y = conv2d_forward(&x, &LayerParams::conv(w.clone(), b.clone()).unwrap(), pad, 1).unwrap();
        assert!(max_abs_diff(y.data(), &conv_reference(&x, &w, &b, pad, 1)) <= 1e-5, "conv case {case}");

        let (p, _) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(p.data(), pool_reference(&x, 2, 2).as_slice(), "pool case {case}");

        let mut bn = LayerParams::<f32>::batch_norm(c);
        for g in bn.weights.data_mut() {
            *g = r.random_range(0.5..1.5);
        }
        for v in &mut bn.bias {
            *v = r.random_range(-0.5..0.5);
        }
        let (gamma, beta) = (bn.weights.data().to_vec(), bn.bias.clone());
        let (y, _) = batchnorm_forward(&x, &mut bn, true).unwrap();
        assert!(max_abs_diff(y.data(), &batchnorm_reference(&x, &gamma, &beta, 1e-5)) <= 1e-5, "batchnorm case {case}");
    }

    let img = ImageBuffer::from_fn(16, 16, |_, _| [r.random(), r.random(), r.random()]);
    let g = to_grayscale(&img);
    let ii = IntegralImage::new(&g);
    for _ in 0..200 {
        let (x, y) = (r.random_range(0..16u32), r.random_range(0..16u32));
        let (w, h) = (r.random_range(1..=16 - x), r.random_range(1..=16 - y));
        assert_eq!(ii.rect_sum(x, y, w, h), pixel_rect_sum(&g, x, y, w, h));
    }

    let cascade = parse_cascade_xml(&std::fs::read_to_string(fixture("frontalface_default_old.xml")).unwrap()).unwrap();
    let g = to_grayscale(&decode_image(&std::fs::read(fixture("face128.ppm")).unwrap()).unwrap());
    let ii = IntegralImage::new(&g);
    let mut windows = 0;
    for scale in [1.0, 1.1, 1.21] {
        let sc = cascade.scaled(scale);
        for y in (0..96).step_by(19) {
            for x in (0..96).step_by(23) {
                let want = window_stage_sums(&sc, &g, x, y).unwrap();
                let got = sc.stage_sums(&ii, x, y).unwrap();
                assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-9), "window ({x}, {y}) at {scale}");
                assert_eq!(sc.evaluate(&ii, x, y).is_some(), window_score(&sc, &g, x, y).is_some());
                windows += 1;
            }
        }
    }
    assert!(windows >= 50);
    format!("100 conv/pool/batchnorm cases, 200 rectangles, {windows} cascade windows")
}

fn metric_oracle() -> String {
    let as_array = |m: &MetricSet<Ratio<i64>>| [m.accuracy, m.sensitivity, m.specificity, m.precision, m.f1];
    let mut r = rng(501);
    for case in 0..1000 {
        let n = r.random_range(1..60);
        let (pl, pp) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| usize::from(r.random_bool(pl))).collect();
        let preds: Vec<usize> = (0..n).map(|_| usize::from(r.random_bool(pp))).collect();
        let got = compute_metrics::<Ratio<i64>>(&ConfusionCounts::tally(&preds, &labels)).unwrap();
        assert_eq!(as_array(&got), brute_metrics(&preds, &labels), "case {case}");
    }
    let m = compute_metrics::<Ratio<i64>>(&ConfusionCounts::new(3, 1, 5, 1)).unwrap();
    let q = |a, b| Some(Ratio::new(a, b));
    assert_eq!(as_array(&m), [q(4, 5), q(3, 4), q(5, 6), q(3, 4), q(3, 4)]);
    "1000 random vectors exact, worked example (0.8, 0.75, 0.8333, 0.75, 0.75)".into()
}

fn protocol_invariants() -> String {
    let (adults, children) = CohortCounts::load().manifests();
    let folds = loso_splits(&children, Cohort::Child).unwrap();
    assert_eq!(folds.len(), 5);
    for scenario in Scenario::ALL {
        let mut tested = std::collections::BTreeMap::<PathBuf, usize>::new();
        for fold in &folds {
            let sets = build_scenario(scenario, fold, &adults, &children).unwrap();
            let test = ScenarioSets::participants(&sets.test);
            assert_eq!(test.len(), 1);
            assert!(ScenarioSets::participants(&sets.train).is_disjoint(&test));
            assert!(ScenarioSets::participants(&sets.pretrain).is_disjoint(&test));
            if scenario == Scenario::Combined {
                assert_eq!(ScenarioSets::participants(&sets.train).len(), 17 + 4);
            }
            for s in &sets.test {
                *tested.entry(s.path.clone()).or_default() += 1;
            }
        }
        // every child frame of the two training classes is tested exactly once
        assert_eq!(tested.len(), 18219 + 2603, "scenario {scenario:?}");
        assert!(tested.values().all(|&n| n == 1));
    }
    "4 scenarios x 5 folds leak-free, full coverage, scenario 3 trains on 21 participants".into()
}

fn synthetic_end_to_end(work: &Path) -> String {
    let data = work.join("synthetic");
    generate_synthetic(&data, &SyntheticSpec::default()).unwrap();

    let start = Instant::now();
    let s2 = loso(&[2], &data, &work.join("s2"), flags(None, 0)).remove(0);
    let elapsed = start.elapsed();
    let (acc2, sens2) = (mean_of(&s2, |a| a.accuracy.map(|s| s.mean)), mean_of(&s2, |a| a.sensitivity.map(|s| s.mean)));

    // the ordering check uses a shorter schedule; defaults take about 11 minutes here
    let reports = loso(&[1, 4], &data, &work.join("s14"), flags(Some(10), 0));
    let (acc1, acc4) = (mean_of(&reports[0], |a| a.accuracy.map(|s| s.mean)), mean_of(&reports[1], |a| a.accuracy.map(|s| s.mean)));

    let line = format!(
        "scenario 2 acc {acc2:.3} sens {sens2:.3} in {:.0} s; scenario 4 acc {acc4:.3} vs scenario 1 {acc1:.3}",
        elapsed.as_secs_f64()
    );
    assert!(acc2 >= 0.95 && sens2 >= 0.85, "{line}");
    assert!(elapsed < Duration::from_secs(600), "{line}");
    assert!(acc4 >= acc1, "{line}");
    line
}

fn determinism(work: &Path) -> String {
    let spec = SyntheticSpec { children: 3, adults: 2, neutral: 8, tongue_out: 6, smiling: 2, mouth_opening: 2, size: 32, seed: 7 };
    let data = work.join("tiny");
    generate_synthetic(&data, &spec).unwrap();
    let quick = || flags(Some(2), 31);
    let (a, b) = (work.join("det-a"), work.join("det-b"));
    loso(&[1, 2, 3, 4], &data, &a, quick());
    loso(&[1, 2, 3, 4], &data, &b, quick());
    let mut files = 0;
    for id in 1..=4 {
        for ext in ["md", "csv", "json"] {
            let name = format!("scenario-{id}.{ext}");
            assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name}");
            files += 1;
        }
    }

    let model = work.join("det-model");
    let args = TrainArgs {
        manifest_adults: Some(data.join("adults.json")),
        manifest_children: None,
        init_checkpoint: None,
        out: model.clone(),
        train: quick(),
    };
    cmd_train(&args).unwrap();
    let path = model.join("model.gfck");
    let bytes = std::fs::read(&path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.to_bytes(), bytes);
    assert_eq!(Checkpoint::from_bytes(&loaded.to_bytes()).unwrap(), loaded);
    format!("{files} report files byte-identical across reruns, checkpoint re-encodes to the same {} bytes", bytes.len())
}

fn augmentation_contract() -> String {
    let t = uniform(Shape::new(1, 3, 32, 32), 0.0, 1.0, &mut rng(502));
    for fill in [Fill::Zero, Fill::Edge] {
        assert_eq!(apply_augment(&t, AugmentParams { scale: 1.0, angle_deg: 0.0 }, fill), t);
    }
    let mut r = rng(503);
    let (mut smin, mut smax, mut amin, mut amax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for _ in 0..100_000 {
        let p = AugmentParams::sample(&mut r);
        smin = smin.min(p.scale);
        smax = smax.max(p.scale);
        amin = amin.min(p.angle_deg);
        amax = amax.max(p.angle_deg);
    }
    assert!(smin >= 0.5 && smax <= 1.0 && amin >= -20.0 && amax <= 20.0);
    format!("identity at (1, 0); 1e5 draws: scale [{smin:.3}, {smax:.3}], angle [{amin:.2}, {amax:.2}]")
}

fn api_round_trip(work: &Path) -> String {
    let videos = work.join("videos/C01-clip");
    std::fs::create_dir_all(&videos).unwrap();
    for i in 0..40u8 {
        let mut ppm = b"P6\n4 4\n255\n".to_vec();
        ppm.extend(std::iter::repeat_n(i, 48));
        std::fs::write(videos.join(format!("{i:04}.ppm")), ppm).unwrap();
    }
    let annotations = work.join("annotations");
    std::fs::create_dir_all(&annotations).unwrap();
    let state = AppState::new(work.join("videos"), annotations.clone(), None);
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async {
        let send = |method: &str, body: Option<String>| {
            let req = Request::builder().method(method).uri("/api/videos/C01-clip/events");
            let req = match body {
                Some(b) => req.header("content-type", "application/json").body(Body::from(b)).unwrap(),
                None => req.body(Body::empty()).unwrap(),
            };
            router(state.clone()).oneshot(req)
        };
        let doc = r#"{"video_id":"C01-clip","fps":30,"events":[{"gesture":"tongue_out","start_frame":10,"end_frame":20}]}"#;
        let put = send("PUT", Some(doc.into())).await.unwrap();
        assert_eq!(put.status(), StatusCode::OK);
        let saved = std::fs::read(annotations.join("C01-clip.json")).unwrap();
        let got = send("GET", None).await.unwrap();
        assert_eq!(got.status(), StatusCode::OK);
        let body = got.into_body().collect().await.unwrap().to_bytes();
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["events"][0]["start_frame"], 10);
        assert_eq!(v["events"][0]["end_frame"], 20);
        assert_eq!(v["events"][0]["gesture"], "tongue_out");
        // saving the reloaded document reproduces the stored file byte for byte
        let again = send("PUT", Some(String::from_utf8(body.to_vec()).unwrap())).await.unwrap();
        assert_eq!(again.status(), StatusCode::OK);
        assert_eq!(std::fs::read(annotations.join("C01-clip.json")).unwrap(), saved);
        let bad = r#"{"events":[{"gesture":"tongue_out","start_frame":20,"end_frame":10}]}"#;
        assert_eq!(send("PUT", Some(bad.into())).await.unwrap().status(), StatusCode::UNPROCESSABLE_ENTITY);
    });
    "PUT/GET {start 10, end 20, tongue_out} reproduces the stored document; start > end gives 422".into()
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let results: Vec<(&str, Outcome)> = vec![
        ("gradient fidelity", check(gradient_fidelity)),
        ("kernel oracles", check(kernel_oracles)),
        ("metric oracle", check(metric_oracle)),
        ("protocol invariants", check(protocol_invariants)),
        ("synthetic end-to-end", check(|| synthetic_end_to_end(w))),
        ("determinism", check(|| determinism(w))),
        ("augmentation contract", check(augmentation_contract)),
        ("annotation API round-trip", check(|| api_round_trip(w))),
    ];
    let mut text = String::from("\nacceptance criteria\n");
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => text.push_str(&format!("PASS  {name}: {detail}\n")),
            Err(why) => text.push_str(&format!("FAIL  {name}: {}\n", why.lines().next().unwrap_or(""))),
        }
    }
    // written to the process stdout so the lines show even when output is captured
    std::io::stdout().write_all(text.as_bytes()).unwrap();
    let failed: Vec<&str> = results.iter().filter(|(_, o)| o.is_err()).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
