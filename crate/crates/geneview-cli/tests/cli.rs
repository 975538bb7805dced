//! End-to-end checks of the binary: exit codes, caching output, artifacts.

use std::path::Path;
use std::process::Command;

fn geneview() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geneview"))
}

fn write_config(dir: &Path, data: &Path, out: &Path, recipes: &str) -> std::path::PathBuf {
    let path = dir.join("config.conf");
    let content = format!(
        "data.variants = {}\n\
         data.text = {}\n\
         data.bioentities = {}\n\
         data.keywords = {}\n\
         output.dir = {}\n\
         run.seed = 42\n\
         run.threads = 1\n\
         split.kind = kfold\n\
         split.k = 3\n\
         recipes = {recipes}\n\
         ensemble.strategy = logloss_min\n\
         gbdt.rounds = 25\n\
         gbdt.learning_rate = 0.2\n\
         gbdt.max_depth = 3\n\
         gbdt.early_stop_fraction = 0\n\
         embed.dim = 12\n\
         embed.epochs = 1\n\
         pvdbow.dim = 12\n\
         pvdbow.epochs = 1\n\
         lda.sweeps = 15\n\
         lda.infer_sweeps = 10\n",
        data.join("variants.csv").display(),
        data.join("text.txt").display(),
        data.join("bioentities.tsv").display(),
        data.join("keywords.txt").display(),
        out.display(),
    );
    std::fs::write(&path, content).unwrap();
    path
}

fn synth(dir: &Path, samples: usize) {
    let status = geneview()
        .args([
            "synth",
            "--out",
            dir.to_str().unwrap(),
            "--samples",
            &samples.to_string(),
            "--seed",
            "7",
        ])
        .status()
        .unwrap();
    assert!(status.success());
}

fn light_recipe(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("light.recipe");
    std::fs::write(
        &path,
        "name = light\n\
         view.document = pos_counts\n\
         view.entity_text = term_frequency\n\
         view.entity_name = char_encoding\n",
    )
    .unwrap();
    path
}

#[test]
fn run_all_produces_report_and_caches() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 60);
    let out = tmp.path().join("out");
    let recipe = light_recipe(tmp.path());
    let config = write_config(tmp.path(), &data, &out, recipe.to_str().unwrap());

    let first = geneview()
        .args(["run-all", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        first.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert!(out.join("report.json").exists());
    assert!(out.join("report.txt").exists());
    assert!(out.join("corpus.json").exists());
    assert!(out.join("fold0/light/model.gb").exists());
    assert!(out.join("fold0/light/validation_predictions.csv").exists());
    assert!(out.join("fold0/blended_predictions.csv").exists());

    // Second run resumes entirely from caches, bit-identically.
    let report_before = std::fs::read(out.join("report.json")).unwrap();
    let second = geneview()
        .args(["run-all", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(second.status.success());
    let stdout = String::from_utf8_lossy(&second.stdout);
    assert!(stdout.contains("cache hit"), "stdout: {stdout}");
    let report_after = std::fs::read(out.join("report.json")).unwrap();
    assert_eq!(report_before, report_after);
}

#[test]
fn missing_text_ids_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::write(
        data.join("variants.csv"),
        "ID,Gene,Variation,Class\n0,BRCA1,T1773I,1\n1,KRAS,G12D,2\n",
    )
    .unwrap();
    std::fs::write(data.join("text.txt"), "ID,Text\n0||only one text row\n").unwrap();
    std::fs::write(data.join("bioentities.tsv"), "kras\tgene\n").unwrap();
    std::fs::write(data.join("keywords.txt"), "growth\n").unwrap();
    let config = write_config(tmp.path(), &data, &tmp.path().join("out"), "GBDT_5");

    let output = geneview()
        .args(["prepare", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains('1'), "stderr: {stderr}");
}

#[test]
fn unknown_recipe_exits_2_and_lists_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 30);
    let config = write_config(tmp.path(), &data, &tmp.path().join("out"), "GBDT_5");

    let output = geneview()
        .args([
            "featurize",
            "--config",
            config.to_str().unwrap(),
            "--recipe",
            "NOT_A_RECIPE",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("GBDT_1"), "stderr: {stderr}");
}

#[test]
fn empty_recipe_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 30);
    let empty = tmp.path().join("empty.recipe");
    std::fs::write(&empty, "name = hollow\n").unwrap();
    let config = write_config(tmp.path(), &data, &tmp.path().join("out"), "GBDT_5");

    let output = geneview()
        .args([
            "featurize",
            "--config",
            config.to_str().unwrap(),
            "--recipe",
            empty.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn grid_with_four_models_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 60);
    let out = tmp.path().join("out");
    // Four light recipe files.
    let mut names = Vec::new();
    for i in 0..4 {
        let path = tmp.path().join(format!("r{i}.recipe"));
        std::fs::write(
            &path,
            format!(
                "name = r{i}\n\
                 view.document = pos_counts\n\
                 view.entity_name = char_encoding len={}\n",
                4 + i
            ),
        )
        .unwrap();
        names.push(path.display().to_string());
    }
    let config = write_config(tmp.path(), &data, &out, &names.join(","));

    let output = geneview()
        .args([
            "run-all",
            "--config",
            config.to_str().unwrap(),
            "--strategy",
            "grid",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("optimize_weights"), "stderr: {stderr}");
}

#[test]
fn stage1_fixed_split_runs_one_fold() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 60);
    let out = tmp.path().join("out");
    let recipe = light_recipe(tmp.path());
    let config_path = tmp.path().join("config.conf");
    let content = format!(
        "data.variants = {}\n\
         data.text = {}\n\
         data.split_ids = {}\n\
         output.dir = {}\n\
         run.seed = 1\n\
         split.kind = stage1-fixed\n\
         recipes = {}\n\
         ensemble.strategy = logloss_min\n\
         gbdt.rounds = 15\n\
         gbdt.max_depth = 3\n\
         gbdt.early_stop_fraction = 0\n",
        data.join("variants.csv").display(),
        data.join("text.txt").display(),
        data.join("split_ids.txt").display(),
        out.display(),
        recipe.display(),
    );
    std::fs::write(&config_path, content).unwrap();

    let output = geneview()
        .args(["run-all", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(out.join("fold0/light/model.gb").exists());
    assert!(!out.join("fold1").exists());
}

#[test]
fn env_override_changes_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 30);
    let out_a = tmp.path().join("out_a");
    let out_b = tmp.path().join("out_b");
    let recipe = light_recipe(tmp.path());
    let config = write_config(tmp.path(), &data, &out_a, recipe.to_str().unwrap());

    let a = geneview()
        .args(["prepare", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(a.status.success());
    // Same config, output overridden through the environment.
    let b = geneview()
        .args(["prepare", "--config", config.to_str().unwrap()])
        .env("GV_OUTPUT_DIR", out_b.to_str().unwrap())
        .output()
        .unwrap();
    assert!(b.status.success());
    assert!(out_b.join("corpus.json").exists());
}
