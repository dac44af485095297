// The whole file-based pipeline, stage by stage, as the binary runs it.

use pi_sentry::cli;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let out = dir.path().to_str().ok_or("non-utf8 temp path")?;
    let stages: &[&[&str]] = &[
        &["synth", "--users", "40", "--apps", "20", "--seed", "2"],
        &["ingest"],
        &["aggregate"],
        &["features"],
        &["label"],
        &["train", "--seed", "2"],
        &["evaluate"],
        &["predict"],
        &["blacklist"],
        &["match"],
        &["report"],
    ];
    for args in stages {
        let mut argv = vec!["pi-sentry"];
        argv.extend_from_slice(args);
        argv.extend(["--output", out]);
        let code = cli::run(argv);
        println!("{:<10} exit {code}", args[0]);
        if code != 0 {
            return Err(format!("stage {} failed", args[0]).into());
        }
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join(cli::EVAL_REPORT))?)?;
    println!("f1 {} coverage {}", report["f1"], report["coverage"]);
    println!("{}", std::fs::read_to_string(dir.path().join(cli::LEAK_SUMMARY))?.lines().take(4).collect::<Vec<_>>().join("\n"));
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
