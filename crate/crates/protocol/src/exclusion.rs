use std::path::Path;

/// Path prefixes the sensor never fingerprints. Any matching prefix excludes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExclusionRules {
    prefixes: Vec<String>,
}

impl ExclusionRules {
    pub fn new<S: Into<String>>(prefixes: impl IntoIterator<Item = S>) -> Self {
        ExclusionRules {
            prefixes: prefixes.into_iter().map(Into::into).collect(),
        }
    }

    /// One prefix per line. Blank lines and lines starting with `#` are
    /// skipped; trailing whitespace is stripped.
    pub fn parse(text: &str) -> Self {
        let prefixes = text
            .lines()
            .map(str::trim_end)
            .filter(|line| !line.is_empty() && !line.starts_with('#'))
            .map(str::to_owned)
            .collect();
        ExclusionRules { prefixes }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn prefixes(&self) -> &[String] {
        &self.prefixes
    }

    pub fn is_excluded(&self, path: &str) -> bool {
        self.prefixes.iter().any(|p| path.starts_with(p.as_str()))
    }
}
