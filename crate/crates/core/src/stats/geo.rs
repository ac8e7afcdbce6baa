//! Static CIDR → country table with longest-prefix matching.

use std::net::IpAddr;
use std::path::Path;

use crate::error::{ArchiveError, Result};

pub const UNKNOWN_COUNTRY: &str = "ZZ";

#[derive(Clone, Debug, PartialEq, Eq)]
struct Entry {
    network: u128,
    prefix: u8,
    v4: bool,
    country: String,
}

#[derive(Clone, Debug, Default)]
pub struct CountryTable {
    entries: Vec<Entry>,
}

fn key(addr: IpAddr) -> (u128, bool) {
    match addr {
        IpAddr::V4(a) => (u128::from(u32::from(a)), true),
        IpAddr::V6(a) => match a.to_ipv4_mapped() {
            Some(v4) => (u128::from(u32::from(v4)), true),
            None => (u128::from(a), false),
        },
    }
}

fn mask(prefix: u8, v4: bool) -> u128 {
    let width = if v4 { 32 } else { 128 };
    if prefix == 0 {
        0
    } else {
        let ones = u128::MAX << (128 - u32::from(prefix));
        ones >> (128 - width)
    }
}

impl CountryTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Parses `CIDR<TAB>CC` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = CountryTable::empty();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let bad = || ArchiveError::Config(format!("cidr table line {}: {line:?}", n + 1));
            let (cidr, cc) = line.split_once('\t').ok_or_else(bad)?;
            let cc = cc.trim();
            if cc.len() != 2 || !cc.bytes().all(|b| b.is_ascii_uppercase()) {
                return Err(bad());
            }
            table.insert(cidr.trim(), cc).map_err(|_| bad())?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, cidr: &str, country: &str) -> std::result::Result<(), String> {
        let (addr, prefix) = cidr.split_once('/').ok_or("missing prefix length")?;
        let addr: IpAddr = addr.parse().map_err(|_| "bad address")?;
        let prefix: u8 = prefix.parse().map_err(|_| "bad prefix length")?;
        let (bits, v4) = key(addr);
        if prefix > if v4 { 32 } else { 128 } {
            return Err("prefix length out of range".into());
        }
        self.entries.push(Entry {
            network: bits & mask(prefix, v4),
            prefix,
            v4,
            country: country.to_string(),
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Country of the most specific matching network, or `ZZ`.
    pub fn country_of(&self, addr: IpAddr) -> &str {
        let (bits, v4) = key(addr);
        self.entries
            .iter()
            .filter(|e| e.v4 == v4 && bits & mask(e.prefix, v4) == e.network)
            .max_by_key(|e| e.prefix)
            .map_or(UNKNOWN_COUNTRY, |e| e.country.as_str())
    }
}
