use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use qder::{QderError, Result};

/// Output directory of one command. Tracks every artifact so a failed
/// command can remove what it wrote.
pub struct OutDir {
    root: PathBuf,
    created_root: bool,
    artifacts: BTreeSet<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<OutDir> {
        let created_root = !root.exists();
        std::fs::create_dir_all(root).map_err(|e| QderError::io(root, e))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            created_root,
            artifacts: BTreeSet::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Register `name` as an artifact and return its path.
    pub fn claim(&mut self, name: &str) -> PathBuf {
        self.artifacts.insert(name.to_string());
        self.root.join(name)
    }

    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<()> {
        let path = self.claim(name);
        let file = File::create(&path).map_err(|e| QderError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| QderError::io(&path, e))
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")
        })
    }

    /// Write `manifest.json` with the sorted artifact list.
    pub fn finish(&mut self, command: &str, config: &impl Serialize) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a, C: Serialize> {
            command: &'a str,
            artifacts: Vec<String>,
            config: &'a C,
        }
        let artifacts: Vec<String> = self.artifacts.iter().cloned().collect();
        self.write_json(
            "manifest.json",
            &Manifest {
                command,
                artifacts,
                config,
            },
        )
    }

    /// Remove every registered artifact, and the directory if this command
    /// created it and it is now empty.
    pub fn discard(self) {
        for name in &self.artifacts {
            let _ = std::fs::remove_file(self.root.join(name));
        }
        if self.created_root {
            let _ = std::fs::remove_dir(&self.root);
        }
    }
}
