use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::datasets::{sha256_hex, DataError, MNIST_FILES};

/// npm tarball carrying the four raw MNIST IDX files under `package/data/`.
pub const MNIST_URL: &str = "https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz";
pub const MNIST_SHA256: &str = "8f87f2d0d9133e6c9f7012d6d26bb05409e7e870a1de21d1a600b8d400cc07ed";
pub const MNIST_FILE_SHA256: [(&str, &str); 4] = [
    ("train-images-idx3-ubyte", "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"),
    ("train-labels-idx1-ubyte", "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"),
    ("t10k-images-idx3-ubyte", "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"),
    ("t10k-labels-idx1-ubyte", "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"),
];
pub const CIFAR10_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
pub const CIFAR100_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz";

const MAX_ARCHIVE_BYTES: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FetchTarget {
    Mnist,
    Cifar10,
    Cifar100,
}

impl FetchTarget {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" | "permuted-mnist" => Some(FetchTarget::Mnist),
            "cifar10" | "cifar-10" => Some(FetchTarget::Cifar10),
            "cifar100" | "cifar-100" => Some(FetchTarget::Cifar100),
            _ => None,
        }
    }
}

/// Where to get an archive and the digest it must have. A `url` without an
/// `http(s)://` scheme is read from the local filesystem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchSource {
    pub url: String,
    pub sha256: Option<String>,
}

impl FetchSource {
    pub fn default_for(target: FetchTarget) -> Self {
        match target {
            FetchTarget::Mnist => FetchSource { url: MNIST_URL.into(), sha256: Some(MNIST_SHA256.into()) },
            FetchTarget::Cifar10 => FetchSource { url: CIFAR10_URL.into(), sha256: None },
            FetchTarget::Cifar100 => FetchSource { url: CIFAR100_URL.into(), sha256: None },
        }
    }
}

fn download(url: &str) -> Result<Vec<u8>, DataError> {
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        let path = url.strip_prefix("file://").unwrap_or(url);
        return fs::read(path).map_err(|source| DataError::Io { path: path.into(), source });
    }
    let mut response = ureq::get(url).call().map_err(|e| DataError::Download(format!("{url}: {e}")))?;
    response.body_mut().with_config().limit(MAX_ARCHIVE_BYTES).read_to_vec().map_err(|e| DataError::Download(format!("{url}: {e}")))
}

fn verify(label: &Path, bytes: &[u8], expected: &str) -> Result<(), DataError> {
    let actual = sha256_hex(bytes);
    if actual.eq_ignore_ascii_case(expected) {
        Ok(())
    } else {
        Err(DataError::Checksum { path: label.into(), expected: expected.into(), actual })
    }
}

fn mnist_present(dir: &Path) -> bool {
    MNIST_FILE_SHA256.iter().all(|(name, sha)| fs::read(dir.join(name)).is_ok_and(|b| sha256_hex(&b) == *sha))
}

/// Downloads, verifies and unpacks one dataset under `data_root`. Returns
/// the files written. MNIST is skipped when verified copies already exist.
pub fn fetch_data(target: FetchTarget, data_root: &Path, source: &FetchSource) -> Result<Vec<PathBuf>, HarnessError> {
    let Some(expected) = source.sha256.as_deref() else {
        return Err(HarnessError::Config(vec![super::FieldError {
            field: "sha256".into(),
            message: format!("{target:?} has no pinned digest; pass --sha256 for {}", source.url),
        }]));
    };
    let mnist_dir = data_root.join("mnist");
    if target == FetchTarget::Mnist && source.url == MNIST_URL && mnist_present(&mnist_dir) {
        return Ok(MNIST_FILES.iter().map(|f| mnist_dir.join(f)).collect());
    }
    let archive = download(&source.url)?;
    verify(Path::new(&source.url), &archive, expected)?;
    let mut tar = tar::Archive::new(GzDecoder::new(archive.as_slice()));
    let entries = tar.entries().map_err(|e| HarnessError::io(Path::new(&source.url), e))?;
    let mut written = Vec::new();
    match target {
        FetchTarget::Mnist => {
            fs::create_dir_all(&mnist_dir).map_err(|e| HarnessError::io(&mnist_dir, e))?;
            for entry in entries {
                let mut entry = entry.map_err(|e| HarnessError::io(Path::new(&source.url), e))?;
                let path = entry.path().map_err(|e| HarnessError::io(Path::new(&source.url), e))?.into_owned();
                let Some(name) = path.file_name().and_then(|n| n.to_str()).filter(|n| MNIST_FILES.contains(n)) else { continue };
                let mut bytes = Vec::new();
                entry.read_to_end(&mut bytes).map_err(|e| HarnessError::io(&path, e))?;
                let dest = mnist_dir.join(name);
                if source.url == MNIST_URL {
                    let (_, sha) = MNIST_FILE_SHA256.iter().find(|(n, _)| *n == name).expect("listed file");
                    verify(&dest, &bytes, sha)?;
                }
                fs::write(&dest, &bytes).map_err(|e| HarnessError::io(&dest, e))?;
                written.push(dest);
            }
            if written.len() != MNIST_FILES.len() {
                return Err(DataError::Download(format!("{} holds {} of the 4 MNIST files", source.url, written.len())).into());
            }
        }
        FetchTarget::Cifar10 | FetchTarget::Cifar100 => {
            fs::create_dir_all(data_root).map_err(|e| HarnessError::io(data_root, e))?;
            for entry in entries {
                let mut entry = entry.map_err(|e| HarnessError::io(Path::new(&source.url), e))?;
                let path = entry.path().map_err(|e| HarnessError::io(Path::new(&source.url), e))?.into_owned();
                if entry.unpack_in(data_root).map_err(|e| HarnessError::io(&path, e))? && entry.header().entry_type().is_file() {
                    written.push(data_root.join(path));
                }
            }
        }
    }
    written.sort();
    Ok(written)
}
