//! Loads every sample configuration and runs the matching command, the same
//! way the binary does.

use std::path::PathBuf;

use shardcalc::commands::{self, Globals};

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let globals = Globals {
            config: Some(path.clone()),
            ..Globals::default()
        };
        let name = path.file_name().unwrap().to_string_lossy();
        let outcome = if name.starts_with("plan") {
            commands::plan(&globals, Default::default())
        } else {
            commands::derive(&globals)
        };
        match outcome {
            Ok(o) => println!("--- {name} (exit {})\n{}", o.exit_code, o.text),
            Err(e) => println!("--- {name}: {e}"),
        }
    }
}
