//! `manifest.txt`: one per run directory. Plain `key = value` lines holding
//! the tool version, the resolved arguments as JSON, and SHA-256 digests of
//! every input and output, so a rerun can be checked byte for byte.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::error::CliError;

pub const FILE: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub tool: String,
    pub command: Command,
    pub seed: Option<u64>,
    pub inputs: Vec<(String, PathBuf, String)>,
    /// File name inside the run directory and its digest.
    pub artifacts: Vec<(String, String)>,
}

pub fn tool_version() -> String {
    format!("bsenergy {}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let io = |e| bsenergy::Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut file = fs::File::open(path).map_err(io)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(command: &Command, seed: Option<u64>) -> Self {
        Self {
            tool: tool_version(),
            command: command.clone(),
            seed,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        let digest = sha256_file(path)?;
        self.inputs
            .push((role.to_string(), path.to_path_buf(), digest));
        Ok(())
    }

    /// Records `dir/name`, which must already exist.
    pub fn artifact(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        let digest = sha256_file(&dir.join(name))?;
        self.artifacts.push((name.to_string(), digest));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("tool = {}\n", self.tool));
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed = {seed}\n"));
        }
        let args = serde_json::to_string(&self.command).expect("arguments serialize");
        s.push_str(&format!("args = {args}\n"));
        for (role, path, digest) in &self.inputs {
            s.push_str(&format!(
                "input.{role} = {} sha256:{digest}\n",
                path.display()
            ));
        }
        for (name, digest) in &self.artifacts {
            s.push_str(&format!("artifact = {name} sha256:{digest}\n"));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(FILE);
        fs::write(&path, self.render()).map_err(|e| bsenergy::Error::Io { path, source: e })?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| bsenergy::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let bad = |m: String| -> CliError {
            bsenergy::Error::Format {
                path: path.to_path_buf(),
                message: m,
            }
            .into()
        };
        let mut tool = None;
        let mut seed = None;
        let mut command = None;
        let mut inputs = Vec::new();
        let mut artifacts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("line {} is not `key = value`", n + 1)))?;
            let digest_of = |v: &str| -> Result<(String, String), CliError> {
                let (name, d) = v
                    .rsplit_once(" sha256:")
                    .ok_or_else(|| bad(format!("line {} has no digest", n + 1)))?;
                Ok((name.to_string(), d.to_string()))
            };
            match key {
                "tool" => tool = Some(value.to_string()),
                "seed" => {
                    seed = Some(
                        value
                            .parse()
                            .map_err(|_| bad(format!("bad seed {value:?}")))?,
                    )
                }
                "args" => {
                    command = Some(serde_json::from_str(value).map_err(|e| bad(e.to_string()))?)
                }
                "artifact" => artifacts.push(digest_of(value)?),
                k if k.starts_with("input.") => {
                    let (p, d) = digest_of(value)?;
                    inputs.push((k["input.".len()..].to_string(), PathBuf::from(p), d));
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(Self {
            tool: tool.ok_or_else(|| bad("missing tool line".into()))?,
            command: command.ok_or_else(|| bad("missing args line".into()))?,
            seed,
            inputs,
            artifacts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::GradcheckArgs;

    #[test]
    fn render_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        let cmd = Command::Gradcheck(GradcheckArgs {
            seeds: 3,
            tolerance: 1e-5,
            inject_fault: false,
            verbose: false,
        });
        let mut m = RunManifest::new(&cmd, Some(9));
        m.input("data", &dir.path().join("a.csv")).unwrap();
        m.artifact(dir.path(), "a.csv").unwrap();
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(&dir.path().join(FILE)).unwrap();
        assert_eq!(back.render(), m.render());
        assert_eq!(back.artifacts[0].1.len(), 64);
    }

    #[test]
    fn garbage_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(FILE);
        fs::write(&p, "hello\n").unwrap();
        assert_eq!(RunManifest::read(&p).unwrap_err().exit_code(), 3);
    }
}
