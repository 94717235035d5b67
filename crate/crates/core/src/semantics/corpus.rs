use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ontology, SemanticRepresentation};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub sr: SemanticRepresentation,
    pub text: String,
    pub split: Split,
}

impl Example {
    pub fn is_multi_domain(&self) -> bool {
        self.sr.is_multi_domain()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    examples: Vec<Example>,
}

impl Corpus {
    /// Validates every example against the ontology.
    pub fn new(examples: Vec<Example>, ontology: &Ontology) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            check_example(ex, ontology).map_err(|m| Error::Validation(format!("record {}: {m}", i + 1)))?;
        }
        Ok(Corpus { examples })
    }

    /// Reads JSON Lines. Blank lines are skipped; record numbers in errors
    /// are 1-based line numbers.
    pub fn from_reader(reader: impl BufRead, ontology: &Ontology) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("<line {}>", i + 1), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Parse {
                location: format!("record {} column {}", i + 1, e.column()),
                message: e.to_string(),
            })?;
            check_example(&ex, ontology).map_err(|m| Error::Validation(format!("record {}: {m}", i + 1)))?;
            examples.push(ex);
        }
        Ok(Corpus { examples })
    }

    pub fn load(path: impl AsRef<Path>, ontology: &Ontology) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_reader(BufReader::new(file), ontology)
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut out, ex)?;
            out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Example> {
        self.examples.iter().filter(|e| e.split == split).collect()
    }

    /// Examples of `split` whose SR lies entirely in `domain`.
    pub fn domain_split(&self, domain: &str, split: Split) -> Vec<&Example> {
        self.examples
            .iter()
            .filter(|e| e.split == split && !e.sr.is_empty() && e.sr.domains().into_iter().all(|d| d == domain))
            .collect()
    }

    pub fn multi_domain_count(&self) -> usize {
        self.examples.iter().filter(|e| e.is_multi_domain()).count()
    }

    /// Number of distinct SR structures (triples with multiplicity, values
    /// ignored) among single-domain examples, per domain.
    pub fn distinct_srs(&self) -> BTreeMap<String, usize> {
        let mut sets: BTreeMap<String, BTreeSet<_>> = BTreeMap::new();
        for ex in self.examples.iter().filter(|e| !e.is_multi_domain()) {
            if let Some(d) = ex.sr.domains().into_iter().next() {
                sets.entry(d.to_string()).or_default().insert(ex.sr.structure_key());
            }
        }
        sets.into_iter().map(|(d, s)| (d, s.len())).collect()
    }
}

fn check_example(ex: &Example, ontology: &Ontology) -> std::result::Result<(), String> {
    if ex.text.trim().is_empty() {
        return Err("empty reference text".into());
    }
    ex.sr.validate(ontology)
}
