//! MNIST download. Files land under their canonical IDX names, already
//! decompressed, or not at all.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use bijepa::data::mnist::{TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use flate2::read::GzDecoder;

pub const DEFAULT_BASE_URL: &str = "https://storage.googleapis.com/cvdf-datasets/mnist/";

/// Canonical file names with their decompressed sizes (IDX header plus payload).
pub const FILES: [(&str, u64); 4] = [
    (TRAIN_IMAGES, 16 + 60_000 * 784),
    (TRAIN_LABELS, 8 + 60_000),
    (TEST_IMAGES, 16 + 10_000 * 784),
    (TEST_LABELS, 8 + 10_000),
];

const MAX_DOWNLOAD: u64 = 128 << 20;

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("{url}: {source}")]
    Http { url: String, source: Box<ureq::Error> },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{url}: decompression failed: {source}")]
    Gzip { url: String, source: std::io::Error },
    #[error("{url}: expected {expected} bytes, got {got}")]
    Length { url: String, expected: u64, got: u64 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FetchError + '_ {
    move |source| FetchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn complete(path: &Path, len: u64) -> bool {
    fs::metadata(path).is_ok_and(|m| m.is_file() && m.len() == len)
}

fn download(url: &str) -> Result<Vec<u8>, FetchError> {
    let http = |source| FetchError::Http {
        url: url.to_string(),
        source: Box::new(source),
    };
    ureq::get(url)
        .call()
        .map_err(http)?
        .into_body()
        .with_config()
        .limit(MAX_DOWNLOAD)
        .read_to_vec()
        .map_err(http)
}

fn decode(url: &str, raw: Vec<u8>) -> Result<Vec<u8>, FetchError> {
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|source| FetchError::Gzip {
                url: url.to_string(),
                source,
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Fetches whichever of the four files are missing or the wrong size.
/// Returns the names actually downloaded; an empty list means nothing to do.
pub fn fetch_mnist(out_dir: &Path, base_url: &str) -> Result<Vec<&'static str>, FetchError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let base = base_url.trim_end_matches('/');
    let mut fetched = Vec::new();
    for (name, len) in FILES {
        let dest = out_dir.join(name);
        if complete(&dest, len) {
            continue;
        }
        let url = format!("{base}/{name}.gz");
        let bytes = decode(&url, download(&url)?)?;
        if bytes.len() as u64 != len {
            // A stale partial copy is as bad as a missing one.
            let _ = fs::remove_file(&dest);
            return Err(FetchError::Length {
                url,
                expected: len,
                got: bytes.len() as u64,
            });
        }
        let part = out_dir.join(format!("{name}.part"));
        let written = fs::write(&part, &bytes).and_then(|()| fs::rename(&part, &dest));
        if let Err(e) = written {
            let _ = fs::remove_file(&part);
            return Err(io_err(&dest)(e));
        }
        fetched.push(name);
    }
    Ok(fetched)
}
