//! Schema and format stability: CSV headers, topology JSON, IDX parsing,
//! checkpoints, and the CLI's exit-code contract.

use std::collections::BTreeMap;
use std::process::Command;

use nnc::data::{load_idx, write_idx_images, SplitTag};
use nnc::error::NncError;
use nnc::experiment::{run_experiment, run_lambda_sweep, DataSource, ExperimentSpec, TopologySource};
use nnc::model::{EndToEndModel, InnerNnSpec};
use nnc::topology::{builtin_butterfly, LambdaSpec, Topology};
use nnc::training::TrainConfig;

fn tiny_spec() -> ExperimentSpec {
    ExperimentSpec {
        name: "interface".to_string(),
        topology: TopologySource::Butterfly { channels: 2, noise_variance: 1e-4 },
        lambda: LambdaSpec::Uniform(1e-4),
        inner: InnerNnSpec { hidden_width: 4 },
        train: TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..Default::default()
        },
        data: DataSource::Synthetic { train: 16, test: 8 },
        eval_repetitions: 2,
        seed: 11,
        max_train_images: None,
        sample_images: 1,
    }
}

#[test]
fn metrics_csv_header_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&tiny_spec(), dir.path()).unwrap();
    assert_eq!(
        outcome.metrics.csv_header(),
        "total_power,nonzero_pct,above_3db_pct,loss,\
         psnr_d1,psnr_std_d1,mse_d1,psnr_d2,psnr_std_d2,mse_d2"
    );
    let loss = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,total,distortion,power\n"));
}

#[test]
fn sweep_csv_header_is_stable() {
    let sweep = run_lambda_sweep(&tiny_spec(), &[1e-3]).unwrap();
    assert!(sweep
        .csv()
        .starts_with("lambda,total_power,nonzero_pct,above_3db_pct,psnr_d1,psnr_d2\n"));
}

#[test]
fn butterfly_topology_json_shape() {
    let topo = builtin_butterfly(32, 1e-4, &LambdaSpec::Uniform(1e-5));
    let json = topo.to_json();
    let parsed = Topology::from_json_str(&json).unwrap();
    assert_eq!(parsed.nodes.len(), 6);
    assert_eq!(parsed.links.len(), 7);
    let keys: Vec<String> = parsed.links.iter().map(|l| l.key()).collect();
    assert_eq!(
        keys,
        ["s1->d1", "s1->r1", "s2->r1", "s2->d2", "r1->r2", "r2->d1", "r2->d2"]
    );
    assert_eq!(parsed.content_hash(), topo.content_hash());
}

#[test]
fn idx_round_trip_and_error_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("imgs.idx");
    let imgs: Vec<Vec<u8>> = (0..3).map(|i| vec![i as u8 * 10; 784]).collect();
    write_idx_images(&path, &imgs, 28, 28).unwrap();
    let ds = load_idx(&path, None, SplitTag::Train).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.images.cols(), 784);
    assert!((ds.images.get(2, 0) - 20.0 / 255.0).abs() < 1e-12);

    // wrong magic: parse error pointing just past the 4 header bytes
    let bad = dir.path().join("bad.idx");
    std::fs::write(&bad, [0u8, 0, 8, 1, 0, 0, 0, 0]).unwrap();
    match load_idx(&bad, None, SplitTag::Train).unwrap_err() {
        NncError::Parse { offset, .. } => assert_eq!(offset, 4),
        other => panic!("unexpected error {other}"),
    }

    // truncated pixel payload
    let cut = dir.path().join("cut.idx");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 100);
    std::fs::write(&cut, &bytes).unwrap();
    assert!(matches!(
        load_idx(&cut, None, SplitTag::Train),
        Err(NncError::Parse { .. })
    ));
}

#[test]
fn checkpoint_survives_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let topo = builtin_butterfly(2, 1e-4, &LambdaSpec::Uniform(0.0));
    let model = EndToEndModel::compile(topo.clone(), InnerNnSpec { hidden_width: 3 }, 9).unwrap();
    let path = dir.path().join("ckpt.json");
    model.save_checkpoint(&path).unwrap();
    let loaded = EndToEndModel::load_checkpoint(&path, topo).unwrap();
    for ((na, ta), (nb, tb)) in model.params().iter().zip(loaded.params()) {
        assert_eq!(na, nb);
        assert_eq!(ta, tb);
    }
}

fn nnc_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nnc"))
}

#[test]
fn cli_make_butterfly_emits_valid_topology() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("topo.json");
    let status = nnc_bin()
        .args(["make-butterfly", "--channels", "4", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let topo = Topology::from_file(&out).unwrap();
    assert!(topo.validate().is_empty());
    assert!(topo.links.iter().all(|l| l.channels == 4));
}

#[test]
fn cli_exit_codes_follow_the_contract() {
    // bad flags -> usage (1)
    let status = nnc_bin().args(["train", "--no-such-flag"]).status().unwrap();
    assert_eq!(status.code(), Some(1));

    // missing spec file -> data error (2)
    let dir = tempfile::tempdir().unwrap();
    let status = nnc_bin()
        .args(["train", "--spec", "/nonexistent/spec.json", "--out"])
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // help -> success
    let status = nnc_bin().arg("--help").status().unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn cli_separation_report_reads_measured_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let topo_path = dir.path().join("topo.json");
    std::fs::write(
        &topo_path,
        builtin_butterfly(32, 1e-4, &LambdaSpec::Uniform(0.0)).to_json(),
    )
    .unwrap();
    let sizes_path = dir.path().join("sizes.csv");
    std::fs::write(
        &sizes_path,
        "image_id,source_node,bytes\n0,s1,400\n0,s2,380\n",
    )
    .unwrap();
    let output = nnc_bin()
        .args(["separation-report", "--topology"])
        .arg(&topo_path)
        .arg("--sizes")
        .arg(&sizes_path)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("s1,400.00"), "{stdout}");
    assert!(stdout.contains("total_power,"), "{stdout}");
}

#[test]
fn per_link_lambda_map_round_trips_through_spec_json() {
    let mut overrides = BTreeMap::new();
    overrides.insert("s1->d1".to_string(), 1e-2);
    let mut spec = tiny_spec();
    spec.lambda = LambdaSpec::PerLink { default: 1e-4, overrides };
    let back: ExperimentSpec = serde_json::from_str(&spec.to_json()).unwrap();
    let topo = back.resolve_topology().unwrap();
    let lm = topo.lambda_map();
    assert_eq!(lm["s1->d1"], 1e-2);
    assert_eq!(lm["r2->d2"], 1e-4);
}
