//! A small JSON record written into each installed dependency describing
//! what was downloaded, so stored archives can be re-verified later.

use std::fs;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::http::RECEIPT_NAME;
use super::FetchedFile;
use crate::registry::DataDepSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptFile {
    pub url: String,
    pub filename: String,
    pub bytes: u64,
    pub sha256: String,
    /// False when post-fetch deleted the archive after extracting it.
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub name: String,
    pub post_fetch: String,
    pub fetched_at_unix: u64,
    pub files: Vec<ReceiptFile>,
}

impl Receipt {
    pub fn new(spec: &DataDepSpec, fetched: &[FetchedFile], deleted: &[String]) -> Self {
        let fetched_at_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            name: spec.name.clone(),
            post_fetch: spec.post_fetch.as_str().to_owned(),
            fetched_at_unix,
            files: fetched
                .iter()
                .map(|f| ReceiptFile {
                    url: f.url.clone(),
                    filename: f.filename.clone(),
                    bytes: f.bytes,
                    sha256: f.sha256.clone(),
                    retained: !deleted.contains(&f.filename),
                })
                .collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(dir.join(RECEIPT_NAME), json + "\n")
    }

    /// Reads the receipt in `dir`; `Ok(None)` if there is none.
    pub fn read(dir: &Path) -> io::Result<Option<Self>> {
        match fs::read_to_string(dir.join(RECEIPT_NAME)) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::RemoteFile;

    #[test]
    fn write_then_read() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = DataDepSpec::managed("D", "", vec![RemoteFile::new("http://h/a.zip")]);
        let fetched = [FetchedFile {
            url: "http://h/a.zip".into(),
            filename: "a.zip".into(),
            bytes: 3,
            sha256: "00".into(),
            attempts: 1,
        }];
        let r = Receipt::new(&spec, &fetched, &["a.zip".into()]);
        assert!(!r.files[0].retained);
        r.write(tmp.path()).unwrap();
        assert_eq!(Receipt::read(tmp.path()).unwrap(), Some(r));
        assert_eq!(Receipt::read(&tmp.path().join("none")).unwrap(), None);
    }
}
