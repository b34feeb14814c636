use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[scene]
extent = [0.0, 0.0, 30.0, 30.0]

[survey]
pulse_frequency = 10000.0

[dataset]
tile_size = 15.0
"#;

fn sylva(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sylva"))
        .args(args)
        .env_remove("SYLVA_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = sylva(args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{args:?} failed:\n{}{}",
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("pipeline.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_writes_artifacts_and_honors_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&out), "--survey.relative_altitude", "120"]);
    for f in ["scene.txt", "flight_plan.toml", "survey_summary.toml", "run_report.toml", "dataset/manifest.toml"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: toml::Table = std::fs::read_to_string(out.join("run_report.toml")).unwrap().parse().unwrap();
    let altitude = report["config"]["survey"]["relative_altitude"].as_float().unwrap();
    assert_eq!(altitude, 120.0);
    let manifest = sylva::dataset::DatasetManifest::load(&out.join("dataset/manifest.toml")).unwrap();
    assert_eq!(manifest.plots.len(), 4);
    assert_eq!(manifest.name, "Sim_1_4");
}

#[test]
fn pipeline_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    let read_all = |dir: &Path| {
        let m = std::fs::read(dir.join("dataset/manifest.toml")).unwrap();
        let mut plots: Vec<_> = std::fs::read_dir(dir.join("dataset/plots"))
            .unwrap()
            .map(|e| std::fs::read(e.unwrap().path()).unwrap())
            .collect();
        plots.sort();
        (m, plots)
    };
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&out)]);
    let first = read_all(&out);
    ok(&["--workers", "2", "pipeline", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(first, read_all(&out));
}

#[test]
fn missing_asset_is_a_config_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        format!(
            "{SMALL}\n[[scene.assets]]\nmesh = \"{}\"\ndescriptor = \"{}\"\n",
            tmp.path().join("nope.obj").display(),
            tmp.path().join("nope.toml").display()
        ),
    )
    .unwrap();
    let out = tmp.path().join("run");
    let o = sylva(&["pipeline", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
    assert!(!out.exists());
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(sylva(&["no-such-command"]).status.code(), Some(2));
    let out = tmp.path().join("run");
    assert_eq!(sylva(&["pipeline", "--out", s(&out), "--scene.voxel_size", "-1"]).status.code(), Some(2));
    assert_eq!(sylva(&["split", "--manifest", "m.toml", "--seed", "18446744073709551615"]).status.code(), Some(2));

    let junk = tmp.path().join("junk.svpc");
    std::fs::write(&junk, b"SVPC\x01\x00garbage").unwrap();
    assert_eq!(sylva(&["eval", "--pred", s(&junk), "--gt", s(&junk)]).status.code(), Some(3));
}

#[test]
fn stage_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = small_config(d);
    let c = s(&cfg);
    let p = |name: &str| d.join(name);

    let composition = ok(&["generate-scene", "--config", c, "--out", s(&p("scene.txt"))]);
    assert!(composition.contains("stem density"));
    ok(&["voxelize", "--config", c, "--scene", s(&p("scene.txt")), "--out", s(&p("grid.svxg"))]);
    let plan = ok(&["plan-flight", "--config", c, "--scene", s(&p("scene.txt")), "--out", s(&p("plan.toml"))]);
    assert!(plan.contains("legs = 6"), "{plan}");

    ok(&[
        "survey", "--config", c, "--scene", s(&p("scene.txt")), "--grid", s(&p("grid.svxg")), "--out", s(&p("sim.svpc")),
        "--summary", s(&p("summary.toml")), "--survey.pulse_frequency", "100000",
    ]);
    // Voxelizing on the fly gives the same cloud as the dump.
    ok(&["survey", "--config", c, "--scene", s(&p("scene.txt")), "--out", s(&p("sim2.svpc")), "--survey.pulse_frequency=100000"]);
    assert_eq!(std::fs::read(p("sim.svpc")).unwrap(), std::fs::read(p("sim2.svpc")).unwrap());

    let tiled = ok(&["tile", "--config", c, "--cloud", s(&p("sim.svpc")), "--out", s(&p("ds")), "--extent", "0,0,30,30"]);
    assert!(tiled.contains("4 plots"), "{tiled}");
    let manifest = p("ds/manifest.toml");
    ok(&["split", "--config", c, "--manifest", s(&manifest), "--seed", "7", "--out", s(&p("m1.toml"))]);
    ok(&["split", "--config", c, "--manifest", s(&manifest), "--seed", "7", "--out", s(&p("m2.toml"))]);
    assert_eq!(std::fs::read(p("m1.toml")).unwrap(), std::fs::read(p("m2.toml")).unwrap());

    ok(&["nodal", "--config", c, "--scene", s(&p("scene.txt")), "--out", s(&p("nodal.svpc"))]);
    let stats = ok(&[
        "stats", "--config", c, "--cloud", s(&p("sim.svpc")), "--cloud", s(&p("nodal.svpc")), "--scene", s(&p("scene.txt")),
        "--manifest", s(&manifest),
    ]);
    let density = |tag: &str| -> f64 {
        let line = stats.lines().find(|l| l.contains(tag)).unwrap();
        line.rsplit('\t').next().unwrap().parse().unwrap()
    };
    assert!(density("sim.svpc") > 3.0 * density("nodal.svpc"), "{stats}");

    let samples = ok(&["sample", "--config", c, "--manifest", s(&manifest), "--out", s(&p("cyl")), "--split", "train"]);
    assert!(samples.starts_with("samples = "));
    let mut cylinders: Vec<PathBuf> = std::fs::read_dir(p("cyl"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|f| f.extension().is_some_and(|x| x == "svpc"))
        .collect();
    cylinders.sort();
    let with_trees: Vec<&PathBuf> = cylinders
        .iter()
        .filter(|f| sylva::cli::load_sample(f).unwrap().tree_ids().len() >= 2)
        .collect();
    assert!(with_trees.len() >= 2);
    let mixed = ok(&["mix", "--config", c, "--a", s(with_trees[0]), "--b", s(with_trees[1]), "--out", s(&p("mixed.svpc")), "--seed", "4"]);
    assert!(mixed.contains("trees_before"));
    assert!(p("mixed.toml").is_file());

    let eval = ok(&["eval", "--pred", s(&p("sim.svpc")), "--gt", s(&p("sim.svpc"))]);
    assert!(eval.contains("f1 = 100.000"), "{eval}");
    assert!(eval.contains("accuracy = 100.000"), "{eval}");
}

#[test]
fn config_dir_environment_variable_supplies_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    small_config(tmp.path());
    let out = tmp.path().join("scene.txt");
    let o = Command::new(env!("CARGO_BIN_EXE_sylva"))
        .args(["generate-scene", "--out", s(&out)])
        .env("SYLVA_CONFIG_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let scene = sylva::procgen::read_scene(&out).unwrap();
    assert_eq!(scene.extent.max_x, 30.0);
}
