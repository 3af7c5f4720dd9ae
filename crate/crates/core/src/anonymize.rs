//! Salted, stable site labels for publishable reports.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::audit::AuditReport;
use crate::error::ReportError;
use crate::model::QueueId;

/// Hex digits kept from the keyed digest.
const LABEL_HEX_DIGITS: usize = 8;

/// `SITE-` followed by the leading hex digits of SHA-256 over the
/// length-prefixed salt and the site name.
pub fn site_label(site: &str, salt: &str) -> String {
    let mut h = Sha256::new();
    h.update((salt.len() as u64).to_le_bytes());
    h.update(salt.as_bytes());
    h.update(site.as_bytes());
    let hex: String = h
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    format!("SITE-{}", &hex[..LABEL_HEX_DIGITS])
}

/// Mapping from real site names to labels, checked for collisions.
#[derive(Debug, Clone)]
pub struct SiteLabels {
    labels: BTreeMap<String, String>,
}

impl SiteLabels {
    pub fn new<'a>(sites: impl IntoIterator<Item = &'a str>, salt: &str) -> Result<Self, ReportError> {
        if salt.is_empty() {
            return Err(ReportError::EmptySalt);
        }
        let mut labels = BTreeMap::new();
        let mut owners: BTreeMap<String, String> = BTreeMap::new();
        for site in sites {
            let label = site_label(site, salt);
            if let Some(other) = owners.get(&label) {
                if other != site {
                    return Err(ReportError::LabelCollision(other.clone(), site.to_string()));
                }
            }
            owners.insert(label.clone(), site.to_string());
            labels.insert(site.to_string(), label);
        }
        Ok(SiteLabels { labels })
    }

    pub fn get(&self, site: &str) -> Option<&str> {
        self.labels.get(site).map(String::as_str)
    }

    pub fn queue(&self, q: &QueueId) -> QueueId {
        QueueId {
            site: self.get(&q.site).unwrap_or(&q.site).to_string(),
            queue: q.queue.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Replace every site name in the report with its salted label. Rows are
/// re-sorted by the new ids.
pub fn anonymize_sites(report: &AuditReport, salt: &str) -> Result<(AuditReport, SiteLabels), ReportError> {
    let labels = SiteLabels::new(report.rows.iter().map(|r| r.queue.site.as_str()), salt)?;
    let mut out = report.clone();
    for row in &mut out.rows {
        row.queue = labels.queue(&row.queue);
        if let Some(a) = &mut row.audit {
            a.queue = labels.queue(&a.queue);
        }
    }
    out.rows.sort_by(|a, b| a.queue.cmp(&b.queue));
    for w in &mut out.smt_warnings {
        w.queue = labels.queue(&w.queue);
    }
    out.smt_warnings.sort_by(|a, b| (&a.queue, &a.cpu_model).cmp(&(&b.queue, &b.cpu_model)));
    out.metadata.anonymized = true;
    Ok((out, labels))
}
