use meshres_experiment::sweep::PredictionFile;
use meshres_experiment::{run_sweep, synth_generate, ExperimentConfig, Scan, SynthJawSpec};

fn scans(count: usize, cells: usize) -> Vec<Scan> {
    let spec = SynthJawSpec {
        cells,
        seed: 21,
        ..Default::default()
    };
    synth_generate(&spec, count)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, mesh)| Scan {
            id: format!("s{i}"),
            mesh,
        })
        .collect()
}

fn quick(resolutions: Vec<usize>, eval_resolutions: Vec<usize>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        resolutions,
        eval_resolutions,
        seed: 5,
        ..Default::default()
    };
    cfg.augment.copies = 1;
    cfg.train.epochs = 1;
    cfg.model.k_neighbors = 8;
    cfg
}

#[test]
fn synthetic_jaws_cover_the_largest_resolution() {
    let spec = SynthJawSpec {
        cells: 16_000,
        seed: 3,
        ..Default::default()
    };
    let jaws = synth_generate(&spec, 2).unwrap();
    for jaw in &jaws {
        assert!(jaw.face_count() >= 16_000);
        assert_eq!(jaw.labels.len(), jaw.face_count());
        // gingiva plus all seven tooth positions are present
        for c in 0..8 {
            assert!(jaw.labels.iter().any(|l| l.index() == c), "class {c} missing");
        }
    }
    assert_ne!(jaws[0].mesh, jaws[1].mesh);
}

#[test]
fn one_native_and_one_upsampled_record() {
    let data = scans(5, 4200);
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(vec![2000], vec![4000]);
    let out = run_sweep(&data, &cfg, Some(dir.path())).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let keys: Vec<_> = out.records.iter().map(|r| (r.train_res, r.eval_res)).collect();
    assert_eq!(keys, vec![(2000, None), (2000, Some(4000))]);

    // every reported number is recomputable from the stored predictions
    for (record, name) in out.records.iter().zip(["pred_native.json", "pred_to_4000.json"]) {
        let text = std::fs::read_to_string(dir.path().join("2000").join(name)).unwrap();
        let file: PredictionFile = serde_json::from_str(&text).unwrap();
        assert_eq!(file.surfaces.len(), out.split.test.len());
        let mut again = file.metrics().unwrap();
        again.inference_ms = record.report.inference_ms;
        assert_eq!(again, record.report);
        let cells: usize = file.surfaces.iter().map(|s| s.gt.len()).sum();
        assert_eq!(record.report.cells as usize, cells);
    }
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["2K", "2K (to 4K)"]);
}

#[test]
fn evaluation_resolutions_are_not_upsampled_into_each_other() {
    let data = scans(5, 1300);
    let cfg = quick(vec![400, 800, 1200], vec![800, 1200]);
    let out = run_sweep(&data, &cfg, None).unwrap();
    let keys: Vec<_> = out.records.iter().map(|r| (r.train_res, r.eval_res)).collect();
    assert_eq!(
        keys,
        vec![(400, None), (400, Some(800)), (400, Some(1200)), (800, None), (1200, None)]
    );
    for r in &out.records {
        assert!(r.report.cells > 0 && r.report.macro_avg.dsc.is_some());
        assert_eq!(r.timings.transfer_ms.is_some(), r.eval_res.is_some());
    }
}

#[test]
fn rerun_is_identical() {
    let data = scans(5, 700);
    let cfg = quick(vec![300], vec![600]);
    let a = run_sweep(&data, &cfg, None).unwrap();
    let b = run_sweep(&data, &cfg, None).unwrap();
    assert_eq!(a.split, b.split);
    for (x, y) in a.records.iter().zip(&b.records) {
        let (mut rx, mut ry) = (x.report.clone(), y.report.clone());
        rx.inference_ms = None;
        ry.inference_ms = None;
        assert_eq!(rx, ry);
    }
}
