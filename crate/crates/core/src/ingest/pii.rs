use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Regex sources for the three redacted categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiiPatterns {
    pub phone: String,
    pub email: String,
    pub national_id: String,
}

impl Default for PiiPatterns {
    fn default() -> Self {
        Self {
            phone: r"(\+84|0)[0-9]{9,10}".into(),
            email: r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}".into(),
            national_id: r"\b[0-9]{12}\b".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionCounts {
    pub phone: usize,
    pub email: usize,
    pub national_id: usize,
}

impl RedactionCounts {
    pub fn total(&self) -> usize {
        self.phone + self.email + self.national_id
    }

    pub fn add(&mut self, other: RedactionCounts) {
        self.phone += other.phone;
        self.email += other.email;
        self.national_id += other.national_id;
    }
}

#[derive(Debug, Clone)]
pub struct Redactor {
    phone: Regex,
    email: Regex,
    national_id: Regex,
}

impl Redactor {
    pub fn new(patterns: &PiiPatterns) -> Result<Self, regex::Error> {
        Ok(Self {
            phone: Regex::new(&patterns.phone)?,
            email: Regex::new(&patterns.email)?,
            national_id: Regex::new(&patterns.national_id)?,
        })
    }

    /// Replaces matches with `[EMAIL]`, `[ID]` and `[PHONE]`.
    ///
    /// Emails go first so digits inside an address are not taken for a phone
    /// number. Passes repeat until nothing matches: a phone replacement can
    /// leave a fresh 12-digit run behind a word boundary.
    pub fn redact(&self, text: &str) -> (String, RedactionCounts) {
        let mut counts = RedactionCounts::default();
        let mut current = text.to_string();
        loop {
            let before = counts.total();
            current = replace_counting(&self.email, &current, "[EMAIL]", &mut counts.email);
            current = replace_counting(&self.national_id, &current, "[ID]", &mut counts.national_id);
            current = replace_counting(&self.phone, &current, "[PHONE]", &mut counts.phone);
            if counts.total() == before {
                return (current, counts);
            }
        }
    }
}

fn replace_counting(re: &Regex, text: &str, with: &str, counter: &mut usize) -> String {
    let n = re.find_iter(text).count();
    if n == 0 {
        return text.to_string();
    }
    *counter += n;
    re.replace_all(text, with).into_owned()
}

static DEFAULT_REDACTOR: LazyLock<Redactor> =
    LazyLock::new(|| Redactor::new(&PiiPatterns::default()).expect("default PII patterns compile"));

/// Redacts with the default patterns.
pub fn redact_pii(text: &str) -> (String, RedactionCounts) {
    DEFAULT_REDACTOR.redact(text)
}
