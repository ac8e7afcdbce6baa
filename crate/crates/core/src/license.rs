//! Registry of license identifiers accepted in record metadata.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

const CONSORTIUM_LICENSE_TEXT: &str = include_str!("../licenses/bm-2030.txt");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct License {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default, skip_serializing)]
    pub text: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct LicenseRegistry {
    entries: BTreeMap<String, License>,
}

impl LicenseRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The default registry every deployment starts from.
    pub fn seeded() -> Self {
        let mut reg = Self::empty();
        let url = |s: &str| Some(s.to_string());
        reg.insert(License {
            id: "CC-BY-4.0".into(),
            title: "Creative Commons Attribution 4.0 International".into(),
            url: url("https://creativecommons.org/licenses/by/4.0/legalcode"),
            text: None,
        });
        reg.insert(License {
            id: "CC0-1.0".into(),
            title: "Creative Commons Zero v1.0 Universal".into(),
            url: url("https://creativecommons.org/publicdomain/zero/1.0/legalcode"),
            text: None,
        });
        reg.insert(License {
            id: "GPL-3.0".into(),
            title: "GNU General Public License v3.0".into(),
            url: url("https://www.gnu.org/licenses/gpl-3.0.txt"),
            text: None,
        });
        reg.insert(License {
            id: "MIT".into(),
            title: "MIT License".into(),
            url: url("https://opensource.org/licenses/MIT"),
            text: None,
        });
        reg.insert(License {
            id: "bm-2030".into(),
            title: "Consortium internal data license".into(),
            url: None,
            text: Some(CONSORTIUM_LICENSE_TEXT.to_string()),
        });
        reg
    }

    pub fn insert(&mut self, license: License) {
        self.entries.insert(license.id.clone(), license);
    }

    pub fn get(&self, id: &str) -> Option<&License> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &License> {
        self.entries.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_ids() {
        let reg = LicenseRegistry::seeded();
        let ids: Vec<_> = reg.ids().collect();
        assert_eq!(ids, ["CC-BY-4.0", "CC0-1.0", "GPL-3.0", "MIT", "bm-2030"]);
        assert!(reg.get("bm-2030").unwrap().text.as_deref().unwrap().contains("consortium"));
        assert!(!reg.contains("no-such-license"));
    }
}
