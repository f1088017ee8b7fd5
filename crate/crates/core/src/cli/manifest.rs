use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{commands, CliError, CliResult, Command, RerunArgs, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    fn of(path: &Path, bytes: &[u8]) -> Self {
        FileDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub tool_version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    /// The parsed command with absolute paths; `rerun` executes this.
    pub invocation: Command,
    /// Configuration after defaults and flag overrides.
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub exit_code: i32,
}

/// Per-run bookkeeping: files read and written, resolved configuration.
pub(crate) struct Ctx {
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: Value,
    pub seed: Option<u64>,
    manifest_name: Option<String>,
}

impl Ctx {
    fn new(manifest: Option<&Path>) -> Self {
        Ctx {
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: Value::Null,
            seed: None,
            manifest_name: manifest
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned()),
        }
    }

    /// Reads an input file and records its digest.
    pub fn read(&mut self, path: &Path) -> CliResult<String> {
        let bytes = fs::read(path).map_err(|e| crate::Error::io(path, e))?;
        self.note_input(path, &bytes);
        String::from_utf8(bytes)
            .map_err(|_| CliError::input("parse", format!("{}: not valid UTF-8", path.display())))
    }

    /// Records the digest of an input that a library loader will read.
    pub fn track(&mut self, path: &Path) -> CliResult {
        let bytes = fs::read(path).map_err(|e| crate::Error::io(path, e))?;
        self.note_input(path, &bytes);
        Ok(())
    }

    fn note_input(&mut self, path: &Path, bytes: &[u8]) {
        if !self.inputs.iter().any(|d| d.path == path) {
            self.inputs.push(FileDigest::of(path, bytes));
        }
    }

    /// Writes `value` as pretty JSON tagged with the schema version and the
    /// manifest name; `None` means stdout.
    pub fn write_json<T: Serialize>(&mut self, path: Option<&Path>, value: &T) -> CliResult {
        let mut v = serde_json::to_value(value)?;
        if let Value::Object(map) = &mut v {
            map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
            if let (Some(name), Some(_)) = (&self.manifest_name, path) {
                map.insert("manifest".into(), Value::from(name.as_str()));
            }
        }
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        match path {
            Some(p) => self.write_bytes(p, text.as_bytes()),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    pub fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> CliResult {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| crate::Error::io(path, e))?;
        self.outputs.retain(|d| d.path != path);
        self.outputs.push(FileDigest::of(path, bytes));
        Ok(())
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub(crate) fn run_recorded(command: Command, argv: Vec<String>) -> CliResult {
    let manifest_path = command.manifest_path();
    let started_at = now();
    let mut ctx = Ctx::new(manifest_path.as_deref());
    let result = commands::dispatch(&command, &mut ctx);
    if let Some(path) = manifest_path {
        if !ctx.outputs.is_empty() {
            let manifest = RunManifest {
                schema_version: SCHEMA_VERSION.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                subcommand: command.name().into(),
                argv,
                invocation: command,
                config: ctx.config,
                inputs: ctx.inputs,
                outputs: ctx.outputs,
                seed: ctx.seed,
                started_at,
                finished_at: now(),
                exit_code: result.as_ref().map_or_else(|e| e.code, |_| 0),
            };
            let mut text = serde_json::to_string_pretty(&manifest)?;
            text.push('\n');
            fs::write(&path, text).map_err(|e| crate::Error::io(&path, e))?;
        }
    }
    result
}

#[derive(Debug, Serialize)]
struct RerunReport {
    manifest: PathBuf,
    subcommand: String,
    reproduced: bool,
    outputs: Vec<OutputCheck>,
}

#[derive(Debug, Serialize)]
struct OutputCheck {
    path: PathBuf,
    expected: String,
    actual: Option<String>,
    identical: bool,
}

/// Replays a manifest: inputs must be unchanged, and every output is
/// compared byte for byte with the recorded digest.
pub(crate) fn rerun(args: &RerunArgs) -> CliResult {
    let text = fs::read_to_string(&args.manifest).map_err(|e| crate::Error::io(&args.manifest, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    if matches!(manifest.invocation, Command::Rerun(_)) {
        return Err(CliError::input("invalid_argument", "manifest records a rerun"));
    }
    for input in &manifest.inputs {
        let bytes = fs::read(&input.path).map_err(|e| crate::Error::io(&input.path, e))?;
        if FileDigest::of(&input.path, &bytes).sha256 != input.sha256 {
            return Err(CliError::input(
                "input_changed",
                format!("{} differs from the recorded input", input.path.display()),
            ));
        }
    }
    let mut argv = manifest.argv.clone();
    argv.truncate(1);
    argv.extend(["rerun".to_string(), "--manifest".into(), args.manifest.display().to_string()]);
    run_recorded(manifest.invocation.clone(), argv)?;

    let outputs: Vec<OutputCheck> = manifest
        .outputs
        .iter()
        .map(|o| {
            let actual = fs::read(&o.path).ok().map(|b| FileDigest::of(&o.path, &b).sha256);
            OutputCheck {
                path: o.path.clone(),
                identical: actual.as_deref() == Some(o.sha256.as_str()),
                expected: o.sha256.clone(),
                actual,
            }
        })
        .collect();
    let report = RerunReport {
        manifest: args.manifest.clone(),
        subcommand: manifest.subcommand,
        reproduced: outputs.iter().all(|o| o.identical),
        outputs,
    };
    let mut ctx = Ctx::new(None);
    ctx.write_json(args.out.as_deref(), &report)?;
    if report.reproduced {
        Ok(())
    } else {
        Err(CliError::input("not_reproduced", "outputs differ from the manifest"))
    }
}
