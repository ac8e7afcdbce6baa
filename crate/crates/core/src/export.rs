//! Metadata export: JSON, JSON-LD, DataCite XML and Dublin Core XML.
//!
//! Every format is a pure function of the version snapshot and produces
//! byte-identical output for identical input. JSON keys are sorted.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::Datelike;
use serde::Serialize;
use serde_json::value::RawValue;
use serde_json::{json, Value};

use crate::error::{ArchiveError, Result};
use crate::license::LicenseRegistry;
use crate::model::{MetadataDocument, RecordVersion, ResourceType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    Json,
    JsonLd,
    DataciteXml,
    DublincoreXml,
}

impl ExportFormat {
    pub const ALL: [ExportFormat; 4] = [
        ExportFormat::Json,
        ExportFormat::JsonLd,
        ExportFormat::DataciteXml,
        ExportFormat::DublincoreXml,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExportFormat::Json => "json",
            ExportFormat::JsonLd => "json-ld",
            ExportFormat::DataciteXml => "datacite-xml",
            ExportFormat::DublincoreXml => "dublincore-xml",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ArchiveError::BadRequest(format!("unknown export format {s:?}")))
    }

    pub fn media_type(self) -> &'static str {
        match self {
            ExportFormat::Json => "application/json",
            ExportFormat::JsonLd => "application/ld+json",
            ExportFormat::DataciteXml | ExportFormat::DublincoreXml => "application/xml",
        }
    }

    pub fn file_extension(self) -> &'static str {
        match self {
            ExportFormat::Json => "json",
            ExportFormat::JsonLd => "jsonld",
            ExportFormat::DataciteXml | ExportFormat::DublincoreXml => "xml",
        }
    }
}

/// Deployment-level values that end up in exported documents.
#[derive(Clone, Copy)]
pub struct ExportContext<'a> {
    pub publisher: &'a str,
    pub licenses: &'a LicenseRegistry,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportedDocument {
    pub bytes: Vec<u8>,
    pub media_type: &'static str,
}

pub fn export(version: &RecordVersion, format: ExportFormat, ctx: ExportContext<'_>) -> Result<ExportedDocument> {
    let text = match format {
        ExportFormat::Json => export_json(version)?,
        ExportFormat::JsonLd => export_json_ld(version, ctx)?,
        ExportFormat::DataciteXml => export_datacite(version, ctx),
        ExportFormat::DublincoreXml => export_dublin_core(version, ctx),
    };
    Ok(ExportedDocument {
        bytes: text.into_bytes(),
        media_type: format.media_type(),
    })
}

fn manifest(version: &RecordVersion) -> Value {
    Value::Array(
        version
            .files
            .iter()
            .map(|f| json!({ "checksum": f.checksum, "name": f.name, "size": f.size }))
            .collect(),
    )
}

pub fn export_json(version: &RecordVersion) -> Result<String> {
    // serde_json's default map is ordered, so round-tripping through Value sorts keys.
    let doc = json!({
        "created_at": version.created_at,
        "files": manifest(version),
        "metadata": serde_json::to_value(&version.metadata)?,
        "owner": version.owner,
        "record_id": version.record_id,
        "shared_at": version.shared_at,
        "shared_with": version.shared_with,
        "state": version.state,
        "tier": version.tier,
        "total_size": version.total_size(),
        "version_id": version.version_id,
        "version_index": version.version_index,
    });
    let mut out = serde_json::to_string_pretty(&doc)?;
    out.push('\n');
    Ok(out)
}

/// Recovers the metadata document from a JSON export.
pub fn import_json(bytes: &[u8]) -> Result<MetadataDocument> {
    let mut doc: Value =
        serde_json::from_slice(bytes).map_err(|e| ArchiveError::BadRequest(format!("export is not json: {e}")))?;
    let metadata = doc
        .get_mut("metadata")
        .map(Value::take)
        .ok_or_else(|| ArchiveError::BadRequest("export has no metadata object".into()))?;
    serde_json::from_value(metadata).map_err(|e| ArchiveError::BadRequest(format!("malformed metadata: {e}")))
}

fn raw(value: &impl Serialize) -> Result<Box<RawValue>> {
    Ok(RawValue::from_string(serde_json::to_string(value)?)?)
}

fn license_url(id: &str, ctx: ExportContext<'_>) -> String {
    ctx.licenses
        .get(id)
        .and_then(|l| l.url.clone())
        .filter(|u| !u.is_empty())
        .unwrap_or_else(|| id.to_string())
}

pub fn export_json_ld(version: &RecordVersion, ctx: ExportContext<'_>) -> Result<String> {
    let md = &version.metadata;
    let creators: Vec<Value> = md
        .authors
        .iter()
        .map(|a| {
            let mut p = json!({ "@type": "Person", "name": a.name });
            if let Some(orcid) = &a.orcid {
                p["@id"] = json!(format!("https://orcid.org/{orcid}"));
                p["identifier"] = json!(orcid);
            }
            if !a.affiliations.is_empty() {
                p["affiliation"] = Value::Array(
                    a.affiliations
                        .iter()
                        .map(|af| {
                            let mut o = json!({ "@type": "Organization", "name": af.name });
                            if let Some(ror) = &af.ror {
                                o["@id"] = json!(ror);
                            }
                            o
                        })
                        .collect(),
                );
            }
            p
        })
        .collect();
    let distribution: Vec<Value> = version
        .files
        .iter()
        .map(|f| {
            json!({
                "@type": "DataDownload",
                "contentSize": f.size,
                "name": f.name,
                "sha256": f.checksum.strip_prefix(crate::files::CHECKSUM_PREFIX).unwrap_or(&f.checksum),
            })
        })
        .collect();

    // Annotation documents are embedded as uploaded, not re-serialized.
    let mut annotations = String::from("[");
    for (i, a) in md.annotations.iter().enumerate() {
        if i > 0 {
            annotations.push(',');
        }
        let document: Box<RawValue> = serde_json::from_str::<&RawValue>(&a.document)
            .map(|r| r.to_owned())
            .or_else(|_| raw(&a.document))?;
        let mut entry: BTreeMap<&str, Box<RawValue>> = BTreeMap::new();
        entry.insert("@type", raw(&"CreativeWork")?);
        entry.insert("encodingFormat", raw(&a.media_type)?);
        entry.insert("mainEntity", document);
        entry.insert("name", raw(&a.label)?);
        annotations.push_str(&serde_json::to_string(&entry)?);
    }
    annotations.push(']');

    let mut doc: BTreeMap<&str, Box<RawValue>> = BTreeMap::new();
    doc.insert(
        "@context",
        raw(&json!({
            "@vocab": "https://schema.org/",
            "sha256": "https://schema.org/sha256",
        }))?,
    );
    doc.insert("@id", raw(&format!("urn:archive:{}", version.version_id))?);
    doc.insert("@type", raw(&schema_type(md.resource_type))?);
    doc.insert("creator", raw(&creators)?);
    doc.insert("datePublished", raw(&md.publication_date.to_string())?);
    doc.insert("description", raw(&md.description)?);
    doc.insert("distribution", raw(&distribution)?);
    doc.insert("identifier", raw(&version.record_id)?);
    doc.insert("keywords", raw(&md.keywords)?);
    doc.insert("license", raw(&license_url(&md.license, ctx))?);
    doc.insert("name", raw(&md.title)?);
    doc.insert("publisher", raw(&json!({ "@type": "Organization", "name": ctx.publisher }))?);
    doc.insert("subjectOf", RawValue::from_string(annotations)?);
    doc.insert("version", raw(&version.version_index)?);
    let mut out = serde_json::to_string_pretty(&doc)?;
    out.push('\n');
    Ok(out)
}

fn schema_type(t: ResourceType) -> &'static str {
    match t {
        ResourceType::Dataset => "Dataset",
        ResourceType::Software => "SoftwareSourceCode",
        ResourceType::Publication => "ScholarlyArticle",
        ResourceType::Other => "CreativeWork",
    }
}

fn datacite_type(t: ResourceType) -> &'static str {
    match t {
        ResourceType::Dataset => "Dataset",
        ResourceType::Software => "Software",
        ResourceType::Publication => "Text",
        ResourceType::Other => "Other",
    }
}

/// Escapes text for element content and double-quoted attributes.
///
/// Characters that XML 1.0 cannot carry at all are replaced by U+FFFD.
pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\r' => out.push_str("&#xD;"),
            '\t' | '\n' => out.push(c),
            c if (c as u32) < 0x20 || c == '\u{FFFE}' || c == '\u{FFFF}' => out.push('\u{FFFD}'),
            c => out.push(c),
        }
    }
    out
}

/// Minimal indenting XML writer.
struct Xml {
    out: String,
    depth: usize,
}

impl Xml {
    fn new() -> Self {
        Xml {
            out: String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"),
            depth: 0,
        }
    }

    fn indent(&mut self) {
        for _ in 0..self.depth {
            self.out.push_str("  ");
        }
    }

    fn tag(&mut self, name: &str, attrs: &[(&str, &str)]) {
        self.out.push('<');
        self.out.push_str(name);
        for (k, v) in attrs {
            let _ = write!(self.out, " {k}=\"{}\"", xml_escape(v));
        }
    }

    fn open(&mut self, name: &str, attrs: &[(&str, &str)]) {
        self.indent();
        self.tag(name, attrs);
        self.out.push_str(">\n");
        self.depth += 1;
    }

    fn close(&mut self, name: &str) {
        self.depth -= 1;
        self.indent();
        let _ = writeln!(self.out, "</{name}>");
    }

    fn leaf(&mut self, name: &str, attrs: &[(&str, &str)], text: &str) {
        self.indent();
        self.tag(name, attrs);
        let _ = writeln!(self.out, ">{}</{name}>", xml_escape(text));
    }
}

pub fn export_datacite(version: &RecordVersion, ctx: ExportContext<'_>) -> String {
    let md = &version.metadata;
    let mut x = Xml::new();
    x.open(
        "resource",
        &[
            ("xmlns", "http://datacite.org/schema/kernel-4"),
            ("xmlns:xsi", "http://www.w3.org/2001/XMLSchema-instance"),
            (
                "xsi:schemaLocation",
                "http://datacite.org/schema/kernel-4 http://schema.datacite.org/meta/kernel-4/metadata.xsd",
            ),
        ],
    );
    x.leaf("identifier", &[("identifierType", "Other")], &version.record_id);
    x.open("creators", &[]);
    if md.authors.is_empty() {
        // creators is mandatory; ":unav" is the kernel's standard "unavailable" value
        x.open("creator", &[]);
        x.leaf("creatorName", &[("nameType", "Organizational")], ":unav");
        x.close("creator");
    }
    for a in &md.authors {
        x.open("creator", &[]);
        x.leaf("creatorName", &[("nameType", "Personal")], &a.name);
        if let Some(orcid) = &a.orcid {
            x.leaf(
                "nameIdentifier",
                &[("nameIdentifierScheme", "ORCID"), ("schemeURI", "https://orcid.org")],
                orcid,
            );
        }
        for af in &a.affiliations {
            match &af.ror {
                Some(ror) => x.leaf(
                    "affiliation",
                    &[
                        ("affiliationIdentifier", ror),
                        ("affiliationIdentifierScheme", "ROR"),
                        ("schemeURI", "https://ror.org"),
                    ],
                    &af.name,
                ),
                None => x.leaf("affiliation", &[], &af.name),
            }
        }
        x.close("creator");
    }
    x.close("creators");
    x.open("titles", &[]);
    x.leaf("title", &[], &md.title);
    x.close("titles");
    x.leaf("publisher", &[], ctx.publisher);
    x.leaf("publicationYear", &[], &md.publication_date.year().to_string());
    x.leaf(
        "resourceType",
        &[("resourceTypeGeneral", datacite_type(md.resource_type))],
        md.resource_type.as_str(),
    );
    if !md.keywords.is_empty() {
        x.open("subjects", &[]);
        for k in &md.keywords {
            x.leaf("subject", &[], k);
        }
        x.close("subjects");
    }
    x.open("dates", &[]);
    x.leaf("date", &[("dateType", "Issued")], &md.publication_date.to_string());
    x.close("dates");
    x.leaf("version", &[], &version.version_index.to_string());
    x.open("rightsList", &[]);
    let url = license_url(&md.license, ctx);
    let title = ctx.licenses.get(&md.license).map_or(md.license.as_str(), |l| l.title.as_str());
    x.leaf("rights", &[("rightsURI", &url), ("rightsIdentifier", &md.license)], title);
    x.close("rightsList");
    if !md.description.is_empty() {
        x.open("descriptions", &[]);
        x.leaf("description", &[("descriptionType", "Abstract")], &md.description);
        x.close("descriptions");
    }
    x.close("resource");
    x.out
}

pub fn export_dublin_core(version: &RecordVersion, ctx: ExportContext<'_>) -> String {
    let md = &version.metadata;
    let mut x = Xml::new();
    x.open(
        "oai_dc:dc",
        &[
            ("xmlns:oai_dc", "http://www.openarchives.org/OAI/2.0/oai_dc/"),
            ("xmlns:dc", "http://purl.org/dc/elements/1.1/"),
            ("xmlns:xsi", "http://www.w3.org/2001/XMLSchema-instance"),
            (
                "xsi:schemaLocation",
                "http://www.openarchives.org/OAI/2.0/oai_dc/ http://www.openarchives.org/OAI/2.0/oai_dc.xsd",
            ),
        ],
    );
    x.leaf("dc:title", &[], &md.title);
    for a in &md.authors {
        x.leaf("dc:creator", &[], &a.name);
    }
    for k in &md.keywords {
        x.leaf("dc:subject", &[], k);
    }
    x.leaf("dc:description", &[], &md.description);
    x.leaf("dc:publisher", &[], ctx.publisher);
    x.leaf("dc:date", &[], &md.publication_date.to_string());
    x.leaf("dc:type", &[], datacite_type(md.resource_type));
    x.leaf("dc:identifier", &[], &version.record_id);
    x.leaf("dc:rights", &[], &license_url(&md.license, ctx));
    x.close("oai_dc:dc");
    x.out
}
