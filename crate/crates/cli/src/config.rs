//! `--config FILE`: keys of `[xsep]` and of the command's section become
//! flags, spliced in right after the command name. Flags given on the
//! command line win.

use std::ffi::OsString;
use std::path::PathBuf;

use xsep_core::storage::Config;

use crate::failure::{Failure, Outcome};

const COMMANDS: [&str; 3] = ["train", "separate", "bench"];
const BENCH_COMMANDS: [&str; 3] = ["table1", "table2", "mix"];

fn config_path(args: &[String]) -> Option<PathBuf> {
    args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).map(PathBuf::from)
        } else {
            a.strip_prefix("--config=").map(PathBuf::from)
        }
    })
}

fn given(args: &[String], flag: &str) -> bool {
    args.iter()
        .any(|a| a == flag || a.starts_with(&format!("{flag}=")))
}

/// Returns `args` with the configured flags inserted.
pub fn merge(args: Vec<OsString>) -> Outcome<Vec<OsString>> {
    let text: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let Some(path) = config_path(&text) else {
        return Ok(args);
    };
    let cfg = Config::load(&path)?;
    let Some(cmd_at) = text.iter().position(|a| COMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut insert_at = cmd_at + 1;
    if text[cmd_at] == "bench" {
        match text.get(cmd_at + 1) {
            Some(sub) if BENCH_COMMANDS.contains(&sub.as_str()) => insert_at += 1,
            _ => return Ok(args),
        }
    }
    let mut extra = Vec::new();
    for section in ["xsep", text[cmd_at].as_str()] {
        for key in cfg.keys(section) {
            let flag = format!("--{}", key.replace('_', "-"));
            if key == "config" || given(&text, &flag) {
                continue;
            }
            let value = cfg.raw(section, &key).unwrap_or_default();
            match value {
                "true" => extra.push(flag),
                "false" => {}
                _ if value.is_empty() => {
                    return Err(Failure::Usage(format!(
                        "{}: [{section}] {key} has no value",
                        path.display()
                    )))
                }
                _ => {
                    extra.push(flag);
                    extra.extend(value.split_whitespace().map(str::to_string));
                }
            }
        }
    }
    let mut out = args;
    out.splice(insert_at..insert_at, extra.into_iter().map(OsString::from));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn splices_section_keys_after_command() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ini");
        std::fs::write(
            &path,
            "[xsep]\nthreads = 2\n[train]\natoms = 16\nweighted = true\nridge = false\nsz = 3\n",
        )
        .unwrap();
        let p = path.to_str().unwrap();
        let merged = merge(os(&["xsep", "--config", p, "train", "--sz", "4"])).unwrap();
        assert_eq!(
            merged,
            os(&[
                "xsep",
                "--config",
                p,
                "train",
                "--threads",
                "2",
                "--atoms",
                "16",
                "--weighted",
                "--sz",
                "4"
            ])
        );
    }

    #[test]
    fn bench_keys_follow_the_bench_command() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ini");
        std::fs::write(&path, "[bench]\nsimulated_mix = a.pgm b.pgm\n").unwrap();
        let p = format!("--config={}", path.display());
        let merged = merge(os(&["xsep", "bench", "mix", &p])).unwrap();
        assert_eq!(
            merged,
            os(&[
                "xsep",
                "bench",
                "mix",
                "--simulated-mix",
                "a.pgm",
                "b.pgm",
                &p
            ])
        );
    }

    #[test]
    fn without_config_args_pass_through() {
        let args = os(&["xsep", "train", "--atoms", "8"]);
        assert_eq!(merge(args.clone()).unwrap(), args);
    }
}
