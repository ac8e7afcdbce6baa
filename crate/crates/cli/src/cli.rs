//! Command-line surface.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "archive", version, about = "Command-line client for the consortium archive")]
pub struct Cli {
    /// Server base URL [env: ARCHIVE_URL]
    #[arg(long, global = true)]
    pub url: Option<String>,
    /// Bearer token [env: ARCHIVE_TOKEN]
    #[arg(long, global = true)]
    pub token: Option<String>,
    /// Community used by `backup` and by `share` without --community [env: ARCHIVE_COMMUNITY]
    #[arg(long, global = true)]
    pub default_community: Option<String>,
    /// Config file [env: ARCHIVE_CONFIG; default ~/.config/archive/config.toml]
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a record from a metadata file, attach files and optionally share it.
    Upload {
        /// Metadata document (JSON).
        #[arg(long)]
        metadata: PathBuf,
        /// File to attach; repeatable.
        #[arg(long = "file")]
        files: Vec<PathBuf>,
        /// Community slug, or `consortium` for the umbrella community.
        #[arg(long)]
        share: Option<String>,
    },
    /// Print a version's metadata, or an export of it.
    Get {
        /// Record id or share-link URL.
        record: String,
        #[arg(long)]
        version: Option<u32>,
        /// json, json-ld, datacite-xml or dublincore-xml.
        #[arg(long)]
        format: Option<String>,
        /// Share-link token.
        #[arg(long)]
        link_token: Option<String>,
    },
    /// Download every file of a version and verify checksums.
    Download {
        /// Record id or share-link URL.
        record: String,
        #[arg(long, default_value = ".")]
        dest: PathBuf,
        #[arg(long)]
        version: Option<u32>,
        #[arg(long)]
        link_token: Option<String>,
    },
    /// Search readable records.
    Search {
        #[arg(short = 'q', long = "query", default_value = "")]
        query: String,
        #[arg(long)]
        community: Option<String>,
        #[arg(long = "type")]
        resource_type: Option<String>,
        /// Required keyword; repeatable.
        #[arg(long = "keyword")]
        keywords: Vec<String>,
        /// Only my own records, drafts included.
        #[arg(long)]
        mine: bool,
        /// newest, oldest or best-match.
        #[arg(long)]
        sort: Option<String>,
        #[arg(long)]
        page: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Replace the metadata of the open draft (or the latest version).
    Update {
        record: String,
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        link_token: Option<String>,
    },
    /// Share the open draft, or promote a community version to the consortium.
    Share {
        record: String,
        /// community or consortium.
        #[arg(long)]
        tier: String,
        #[arg(long)]
        community: Option<String>,
    },
    /// Open a new draft version after the latest one.
    NewVersion {
        record: String,
        #[arg(long)]
        import_files: bool,
        #[arg(long)]
        link_token: Option<String>,
    },
    /// Mint a share link and print its URL.
    Link {
        record: String,
        /// view or edit.
        #[arg(long, default_value = "view")]
        permission: String,
        /// RFC 3339 expiry time.
        #[arg(long)]
        expires: Option<DateTime<Utc>>,
    },
    /// Unique views and downloads per version and in total.
    Stats {
        record: String,
        #[arg(long)]
        link_token: Option<String>,
    },
    /// Upload a file or directory snapshot as the next version of a labelled record.
    Backup {
        path: PathBuf,
        #[arg(long)]
        record_label: String,
        /// License of a newly created backup record.
        #[arg(long, default_value = "CC-BY-4.0")]
        license: String,
    },
    /// Copy a shared record into a new draft on another archive instance.
    Publish {
        record: String,
        #[arg(long)]
        target_url: String,
        #[arg(long)]
        target_token: String,
        #[arg(long)]
        version: Option<u32>,
    },
}
