//! Registrable-domain extraction for referrer URLs.

use url::{Host, Url};

/// Bundled public suffixes. Unlisted TLDs fall back to the single last label.
const PUBLIC_SUFFIXES: &[&str] = &[
    "ac.jp", "ac.uk", "at", "au", "be", "ch", "cn", "co.jp", "co.uk", "com", "com.au", "com.cn", "de",
    "dk", "edu", "edu.au", "es", "eu", "fi", "fr", "github.io", "gov", "gov.uk", "io", "it", "jp", "net",
    "nl", "no", "org", "org.uk", "pl", "se", "uk",
];

/// Registrable domain of a referrer URL, or empty when there is none
/// (unparseable URL, IP literal, bare suffix).
pub fn referrer_domain(referrer: &str) -> String {
    let Ok(url) = Url::parse(referrer) else {
        return String::new();
    };
    match url.host() {
        Some(Host::Domain(host)) => registrable_domain(host),
        _ => String::new(),
    }
}

pub fn registrable_domain(host: &str) -> String {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    let labels: Vec<&str> = host.split('.').collect();
    if labels.iter().any(|l| l.is_empty()) {
        return String::new();
    }
    // longest listed suffix, else the last label
    let suffix_len = (1..=labels.len())
        .rev()
        .find(|&n| PUBLIC_SUFFIXES.contains(&labels[labels.len() - n..].join(".").as_str()))
        .unwrap_or(1);
    if labels.len() <= suffix_len {
        return String::new();
    }
    labels[labels.len() - suffix_len - 1..].join(".")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(referrer_domain("https://sub.example.org/page"), "example.org");
        assert_eq!(referrer_domain("https://example.org"), "example.org");
        assert_eq!(referrer_domain("https://a.b.ox.ac.uk/x?y=1"), "ox.ac.uk");
        assert_eq!(referrer_domain("http://www.bbc.co.uk/"), "bbc.co.uk");
        assert_eq!(referrer_domain("https://user.github.io/repo"), "user.github.io");
        assert_eq!(referrer_domain("https://docs.internal.test/"), "internal.test");
        assert_eq!(referrer_domain("https://WWW.Example.COM./"), "example.com");
        assert_eq!(referrer_domain("https://co.uk/"), "");
        assert_eq!(referrer_domain("http://10.0.0.1/x"), "");
        assert_eq!(referrer_domain("not a url"), "");
    }
}
