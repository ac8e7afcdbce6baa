//! Metadata, identifier and filename validation.

use std::collections::BTreeSet;

use crate::error::ValidationReport;
use crate::license::LicenseRegistry;
use crate::model::{MetadataDocument, JSON_LD_MEDIA_TYPE};

/// Checks every metadata invariant and reports each violation by field path.
pub fn validate_metadata(md: &MetadataDocument, licenses: &LicenseRegistry) -> ValidationReport {
    let mut report = ValidationReport::default();

    if md.title.trim().is_empty() {
        report.push("title", "required");
    }
    if !licenses.contains(&md.license) {
        report.push("license", "unknown identifier");
    }

    let mut seen = BTreeSet::new();
    for (i, kw) in md.keywords.iter().enumerate() {
        if kw.trim().is_empty() {
            report.push(format!("keywords[{i}]"), "empty keyword");
        } else if !seen.insert(kw.to_lowercase()) {
            report.push(format!("keywords[{i}]"), "duplicate keyword");
        }
    }

    for (i, author) in md.authors.iter().enumerate() {
        if author.name.trim().is_empty() {
            report.push(format!("authors[{i}].name"), "required");
        }
        if let Some(orcid) = &author.orcid {
            if let Err(reason) = check_orcid(orcid) {
                report.push(format!("authors[{i}].orcid"), reason.as_str());
            }
        }
        for (j, aff) in author.affiliations.iter().enumerate() {
            if aff.name.trim().is_empty() {
                report.push(format!("authors[{i}].affiliations[{j}].name"), "required");
            }
            if let Some(ror) = &aff.ror {
                if !is_valid_ror(ror) {
                    report.push(format!("authors[{i}].affiliations[{j}].ror"), "malformed");
                }
            }
        }
    }

    for (i, ann) in md.annotations.iter().enumerate() {
        if ann.media_type != JSON_LD_MEDIA_TYPE {
            report.push(format!("annotations[{i}].media_type"), "unsupported media type");
        }
        if serde_json::from_str::<serde_json::Value>(&ann.document).is_err() {
            report.push(format!("annotations[{i}].document"), "malformed json");
        }
    }

    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrcidError {
    Malformed,
    ChecksumMismatch,
}

impl OrcidError {
    pub fn as_str(self) -> &'static str {
        match self {
            OrcidError::Malformed => "malformed",
            OrcidError::ChecksumMismatch => "checksum mismatch",
        }
    }
}

/// ISO 7064 MOD 11-2 check character for the first 15 ORCID digits.
pub fn orcid_check_char(digits: &[u8; 15]) -> char {
    let mut total: u32 = 0;
    for &d in digits {
        total = (total + u32::from(d)) * 2;
    }
    match (12 - total % 11) % 11 {
        10 => 'X',
        n => char::from_digit(n, 10).expect("single digit"),
    }
}

/// Validates the `dddd-dddd-dddd-ddd[dX]` form and its check character.
pub fn check_orcid(orcid: &str) -> Result<(), OrcidError> {
    let bytes = orcid.as_bytes();
    if bytes.len() != 19 {
        return Err(OrcidError::Malformed);
    }
    let mut digits = [0u8; 15];
    let mut n = 0;
    for (i, &b) in bytes.iter().enumerate() {
        let is_sep = matches!(i, 4 | 9 | 14);
        if is_sep {
            if b != b'-' {
                return Err(OrcidError::Malformed);
            }
        } else if i == 18 {
            if !(b.is_ascii_digit() || b == b'X') {
                return Err(OrcidError::Malformed);
            }
        } else {
            if !b.is_ascii_digit() {
                return Err(OrcidError::Malformed);
            }
            digits[n] = b - b'0';
            n += 1;
        }
    }
    if orcid_check_char(&digits) == char::from(bytes[18]) {
        Ok(())
    } else {
        Err(OrcidError::ChecksumMismatch)
    }
}

/// ROR identifiers: `0` followed by six lowercase alphanumerics and two digits.
pub fn is_valid_ror(ror: &str) -> bool {
    let b = ror.as_bytes();
    b.len() == 9
        && b[0] == b'0'
        && b[1..7].iter().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        && b[7..].iter().all(u8::is_ascii_digit)
}

/// File names are single path components: no separators, no parent references.
pub fn check_file_name(name: &str) -> Result<(), &'static str> {
    if name.is_empty() {
        return Err("empty file name");
    }
    if name.len() > 255 {
        return Err("file name too long");
    }
    if name.contains('/') || name.contains('\\') {
        return Err("path separators are not allowed");
    }
    if name == "." || name.starts_with("..") {
        return Err("parent references are not allowed");
    }
    if name.chars().any(char::is_control) {
        return Err("control characters are not allowed");
    }
    Ok(())
}
