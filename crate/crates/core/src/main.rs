use std::path::Path;

use clap::Parser;

/// One PASS/FAIL line per oracle check in a written `verify.json`.
fn print_checks(path: &Path) {
    let Ok(text) = std::fs::read_to_string(path) else {
        return;
    };
    let Ok(report) = serde_json::from_str::<serde_json::Value>(&text) else {
        return;
    };
    for c in report["checks"].as_array().into_iter().flatten() {
        println!(
            "{} {} (value {:e}, tolerance {:e})",
            if c["passed"].as_bool() == Some(true) {
                "PASS"
            } else {
                "FAIL"
            },
            c["name"].as_str().unwrap_or("?"),
            c["value"].as_f64().unwrap_or(f64::NAN),
            c["tolerance"].as_f64().unwrap_or(f64::NAN)
        );
    }
}

fn main() {
    let cli = riszf::cli::Cli::parse();
    match riszf::cli::run(&cli) {
        Ok(files) => {
            for f in files {
                if f.file_name().is_some_and(|n| n == "verify.json") {
                    print_checks(&f);
                }
                println!("{}", f.display());
            }
        }
        Err(e) => {
            if matches!(e, riszf::Error::Verification(_)) {
                print_checks(&cli.global.out.join("verify.json"));
            }
            eprintln!("riszf: {e}");
            std::process::exit(riszf::cli::exit_code(&e));
        }
    }
}
