pub mod bench;
pub mod detect;
pub mod eval;
pub mod simulate;

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::config::ConfigError;
use crate::formats::ParseError;

/// Failures split by exit code: bad data is 1, bad invocation is 2.
/// A closed output pipe is not a failure at all — the consumer has simply
/// stopped listening — so it gets its own silent variant.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Usage(String),
    ClosedPipe,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Usage(_) => 2,
            CliError::ClosedPipe => 0,
        }
    }

    pub fn is_silent(&self) -> bool {
        matches!(self, CliError::ClosedPipe)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) | CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::ClosedPipe => write!(f, "output pipe closed"),
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            return CliError::ClosedPipe;
        }
        CliError::Input(e.to_string())
    }
}

/// `-` means standard input.
pub fn open_input(path: &str) -> Result<Box<dyn BufRead>, CliError> {
    if path == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let file = File::open(path)
        .map_err(|e| CliError::Input(format!("cannot open {path}: {e}")))?;
    Ok(Box::new(BufReader::new(file)))
}

/// `-` means standard output.
pub fn open_output(path: &str) -> Result<Box<dyn Write>, CliError> {
    if path == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout())));
    }
    let file = File::create(path)
        .map_err(|e| CliError::Input(format!("cannot create {path}: {e}")))?;
    Ok(Box::new(BufWriter::new(file)))
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}
