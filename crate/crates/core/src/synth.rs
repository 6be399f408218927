//! Seeded generator of synthetic invoice-like OCR documents with ground
//! truth, plus a word-level report of how far a label set is from that truth.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doc::{BBox, Document, Word};
use crate::error::{Error, Result};
use crate::labels::{truth_labels, Annotation, LabelSet, ValueRecord};
use crate::schema::{FieldDef, FieldSchema};
use crate::seed;
use crate::typer::DataType;

/// Character advance, word height and line pitch in page units.
pub const CHAR_W: f64 = 0.0065;
pub const LINE_H: f64 = 0.013;
const PAGE_W: u32 = 850;
const PAGE_H: u32 = 1100;

const HEADER_SLOTS: [(f64, f64); 4] = [(0.05, 0.15), (0.55, 0.15), (0.05, 0.31), (0.55, 0.31)];
const FOOTER_SLOTS: [(f64, f64); 3] = [(0.55, 0.60), (0.55, 0.75), (0.55, 0.90)];
const TABLE_TOP: f64 = 0.44;
const TABLE_PITCH: f64 = 0.022;
const TABLE_ROWS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Every value sits right of its key on the same line.
    KeyLeft,
    /// Every value sits centered under its key.
    KeyAbove,
    /// Each field picks one of the two relations.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub seed: u64,
    pub layouts: Vec<Layout>,
    pub key_paraphrase_rate: f64,
    pub unknown_key_rate: f64,
    pub char_noise_rate: f64,
    /// Irrelevant typed tokens per document.
    pub distractor_density: usize,
    /// Standard deviation of the per-phrase position shift.
    pub bbox_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Preset::Clean.config(100, 7)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Clean,
    NoisyBench,
}

impl Preset {
    pub fn config(self, n_docs: usize, seed: u64) -> SynthConfig {
        let layouts = vec![Layout::KeyLeft, Layout::KeyAbove, Layout::Mixed];
        match self {
            Preset::Clean => SynthConfig {
                n_docs,
                seed,
                layouts,
                key_paraphrase_rate: 0.0,
                unknown_key_rate: 0.0,
                char_noise_rate: 0.0,
                distractor_density: 0,
                bbox_jitter: 0.0,
            },
            Preset::NoisyBench => SynthConfig {
                n_docs,
                seed,
                layouts,
                key_paraphrase_rate: 0.3,
                unknown_key_rate: 0.1,
                char_noise_rate: 0.03,
                distractor_density: 20,
                bbox_jitter: 0.005,
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Clean => "clean",
            Preset::NoisyBench => "noisy-bench",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Preset::Clean),
            "noisy-bench" => Ok(Preset::NoisyBench),
            _ => Err(Error::config(format!(
                "unknown preset {s:?} (expected clean or noisy-bench)"
            ))),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("key_paraphrase_rate", self.key_paraphrase_rate),
            ("unknown_key_rate", self.unknown_key_rate),
            ("char_noise_rate", self.char_noise_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.key_paraphrase_rate + self.unknown_key_rate > 1.0 {
            return Err(Error::config(
                "key_paraphrase_rate + unknown_key_rate must not exceed 1",
            ));
        }
        if !(self.bbox_jitter >= 0.0 && self.bbox_jitter.is_finite()) {
            return Err(Error::config("bbox_jitter must be non-negative"));
        }
        if self.layouts.is_empty() {
            return Err(Error::config("at least one layout is required"));
        }
        Ok(())
    }
}

fn is_money(f: &FieldDef) -> bool {
    f.allowed_types.contains(&DataType::Money)
}

fn check_capacity(schema: &FieldSchema) -> Result<()> {
    if schema.len() < 3 {
        return Err(Error::validation(
            "schema needs at least 3 fields to place per document",
        ));
    }
    let footer = schema.fields.iter().filter(|f| is_money(f)).count();
    let header = schema.len() - footer;
    if header > HEADER_SLOTS.len() || footer > FOOTER_SLOTS.len() {
        return Err(Error::validation(format!(
            "layout grid holds {} non-money and {} money fields, schema has {header} and {footer}",
            HEADER_SLOTS.len(),
            FOOTER_SLOTS.len()
        )));
    }
    Ok(())
}

/// Generates `cfg.n_docs` documents and their annotations. Each document is
/// built from its own seed, so output does not depend on parallelism.
pub fn generate(
    cfg: &SynthConfig,
    schema: &FieldSchema,
) -> Result<(Vec<Document>, Vec<Annotation>)> {
    cfg.validate()?;
    schema.validate()?;
    check_capacity(schema)?;
    let width = cfg.n_docs.max(1).to_string().len().max(6);
    let out: Vec<(Document, Annotation)> = (0..cfg.n_docs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[i as u64]));
            let id = format!("doc-{i:0width$}");
            generate_one(&id, cfg, schema, &mut rng)
        })
        .collect();
    Ok(out.into_iter().unzip())
}

struct Page {
    words: Vec<Word>,
    blocks: Vec<Vec<usize>>,
    dx: f64,
    dy: f64,
}

impl Page {
    /// Lays `text` out as one phrase whose first word starts at (x, y).
    fn phrase(&mut self, text: &str, x: f64, y: f64) -> (Vec<usize>, f64) {
        let mut ids = Vec::new();
        let mut cursor = x + self.dx;
        for t in text.split_whitespace() {
            let w = t.chars().count() as f64 * CHAR_W;
            let id = self.words.len();
            self.words.push(Word {
                id,
                text: t.to_string(),
                bbox: BBox {
                    x0: cursor,
                    y0: y + self.dy,
                    x1: cursor + w,
                    y1: y + self.dy + LINE_H,
                },
            });
            ids.push(id);
            cursor += w + CHAR_W;
        }
        self.blocks.push(ids.clone());
        (ids, cursor - CHAR_W - self.dx)
    }

    /// A key with its value either to the right or centered below; returns
    /// the value's word ids.
    fn pair(
        &mut self,
        key: &str,
        value: &str,
        x: f64,
        y: f64,
        below: bool,
        rng: &mut ChaCha8Rng,
    ) -> Vec<usize> {
        if below {
            let kw = text_width(key);
            let vw = text_width(value);
            self.phrase(key, x, y);
            let vx = (x + 0.5 * (kw - vw)).max(0.005);
            self.phrase(value, vx, y + 1.5 * LINE_H).0
        } else {
            let (_, end) = self.phrase(key, x, y);
            let gap = rng.gen_range(3..=6) as f64 * CHAR_W;
            self.phrase(value, end + gap, y).0
        }
    }
}

fn text_width(text: &str) -> f64 {
    let n = text.chars().count() as f64;
    n * CHAR_W
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn title_case(key: &str) -> String {
    key.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn paraphrases(field: &str) -> &'static [&'static str] {
    match field {
        "inv_number" => &[
            "Invoice No:",
            "Inv No.",
            "Invoice Num",
            "Invoice ID",
            "Inv. #",
        ],
        "po_number" => &[
            "PO No.",
            "Purchase Order",
            "P.O. No",
            "PO Num",
            "Order Number",
        ],
        "inv_date" => &[
            "Inv. Date",
            "Date of Invoice",
            "Invoice Dt",
            "Date:",
            "Billing Date",
        ],
        "due_date" => &["Due", "Due Dt", "Payment Due Date", "Date Due", "Due By"],
        "total_amount" => &[
            "Total Amount",
            "Total:",
            "Invoice Amount",
            "Grand Total",
            "Total Value",
        ],
        "due_amount" => &[
            "Amount Due:",
            "Balance Due:",
            "Total Due",
            "Amount Payable",
            "Balance",
        ],
        "total_tax" => &["Tax:", "Sales Tax", "Tax Amount", "Tax Total", "Taxes"],
        _ => &["Ref", "Value"],
    }
}

fn unknown_keys(field: &str) -> &'static [&'static str] {
    match field {
        "inv_number" => &["Bill Ref", "Document ID", "Ref"],
        "po_number" => &["Buyer Ref", "Client Ref", "Requisition"],
        "inv_date" => &["Issued", "Dated", "Issued On"],
        "due_date" => &["Pay By", "Payable By", "Settle By"],
        "total_amount" => &["Grand Sum", "Net Payable", "Sum"],
        "due_amount" => &["To Pay", "Pay This", "Outstanding"],
        "total_tax" => &["VAT", "GST", "Levy"],
        _ => &["Misc", "Other"],
    }
}

const MONTHS: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

fn date_value(rng: &mut ChaCha8Rng) -> String {
    let (y, m, d) = (
        rng.gen_range(2015..=2024),
        rng.gen_range(1..=12),
        rng.gen_range(1..=28),
    );
    match rng.gen_range(0..3) {
        0 => format!("{m:02}/{d:02}/{y}"),
        1 => format!("{y}-{m:02}-{d:02}"),
        _ => format!("{} {d}, {y}", MONTHS[m - 1]),
    }
}

fn grouped(cents: u64) -> String {
    let whole = (cents / 100).to_string();
    let mut out = String::new();
    for (i, c) in whole.chars().enumerate() {
        if i > 0 && (whole.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    format!("{out}.{:02}", cents % 100)
}

fn money_value(rng: &mut ChaCha8Rng, max_cents: u64) -> String {
    let amount = grouped(rng.gen_range(100..max_cents));
    match rng.gen_range(0..3) {
        0 => format!("${amount}"),
        1 => amount,
        _ => format!("USD {amount}"),
    }
}

fn digits(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| char::from(b'0' + rng.gen_range(0..10u8)))
        .collect()
}

fn letters(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| char::from(b'A' + rng.gen_range(0..26u8)))
        .collect()
}

fn number_value(field: &str, rng: &mut ChaCha8Rng) -> String {
    match (field, rng.gen_range(0..3)) {
        ("inv_number", 0) => format!("INV-{}", digits(rng, 5)),
        ("inv_number", 1) => format!("{}{}", letters(rng, 2), digits(rng, 6)),
        ("po_number", 0) => format!("45{}", digits(rng, 8)),
        ("po_number", 1) => format!("PO-{}", digits(rng, 4)),
        _ => format!("{}{}", rng.gen_range(1..10), digits(rng, 5)),
    }
}

fn field_value(f: &FieldDef, rng: &mut ChaCha8Rng) -> String {
    if is_money(f) {
        let cap = if f.name == "total_tax" {
            50_000
        } else {
            2_000_000
        };
        money_value(rng, cap)
    } else if f.allowed_types.contains(&DataType::Date) {
        date_value(rng)
    } else {
        number_value(&f.name, rng)
    }
}

fn key_text(f: &FieldDef, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> String {
    let u: f64 = rng.gen();
    if u < cfg.unknown_key_rate {
        pick(rng, unknown_keys(&f.name)).to_string()
    } else if u < cfg.unknown_key_rate + cfg.key_paraphrase_rate {
        pick(rng, paraphrases(&f.name)).to_string()
    } else {
        let k = &f.keys[rng.gen_range(0..f.keys.len())];
        match rng.gen_range(0..3) {
            0 => title_case(k),
            1 => k.to_uppercase(),
            _ => k.clone(),
        }
    }
}

const COMPANIES: [&str; 6] = [
    "Acme Supply",
    "Northwind Traders",
    "Blue Harbor Works",
    "Summit Office Goods",
    "Cedar Lane Partners",
    "Orchid Logistics",
];
const STREETS: [&str; 5] = [
    "Main Street",
    "Oak Avenue",
    "Harbor Road",
    "Elm Court",
    "Mill Lane",
];
const CITIES: [&str; 5] = [
    "Springfield",
    "Riverton",
    "Lakeside",
    "Fairview",
    "Georgetown",
];
const TITLES: [&str; 3] = ["Billing Statement", "Sales Record", "Remittance Advice"];
const LOUD_TITLES: [&str; 3] = ["INVOICE", "Tax Invoice", "Commercial Invoice"];
const ITEMS: [&str; 8] = [
    "Widget",
    "Cable Kit",
    "Toner",
    "Paper Ream",
    "Service Fee",
    "Bracket",
    "Labels",
    "Adapter",
];
const HEADER_DISTRACTORS: [(&str, u8); 6] = [
    ("Account No.", b'n'),
    ("Ship Date", b'd'),
    ("Customer ID", b'n'),
    ("Order Date", b'd'),
    ("Ref No.", b'n'),
    ("Delivery Date", b'd'),
];
const FOOTER_DISTRACTORS: [&str; 4] = ["Subtotal", "Shipping", "Discount", "Amount Paid"];

fn generate_one(
    id: &str,
    cfg: &SynthConfig,
    schema: &FieldSchema,
    rng: &mut ChaCha8Rng,
) -> (Document, Annotation) {
    let mut page = Page {
        words: Vec::new(),
        blocks: Vec::new(),
        dx: rng.gen_range(-0.02..=0.02),
        dy: rng.gen_range(-0.02..=0.02),
    };
    let noisy = cfg.distractor_density > 0;
    let layout = cfg.layouts[rng.gen_range(0..cfg.layouts.len())];

    page.phrase(pick(rng, &COMPANIES), 0.05, 0.03);
    page.phrase(pick(rng, &STREETS), 0.05, 0.055);
    page.phrase(pick(rng, &CITIES), 0.05, 0.08);
    let title = if noisy && rng.gen_bool(0.3) {
        pick(rng, &LOUD_TITLES)
    } else {
        pick(rng, &TITLES)
    };
    page.phrase(title, 0.62, 0.03);

    let n = rng.gen_range(3..=schema.len());
    let mut chosen: Vec<&FieldDef> = schema.fields.choose_multiple(rng, n).collect();
    chosen.sort_by_key(|f| f.id);
    let mut header: Vec<usize> = (0..HEADER_SLOTS.len()).collect();
    let mut footer: Vec<usize> = (0..FOOTER_SLOTS.len()).collect();
    header.shuffle(rng);
    footer.shuffle(rng);
    let (mut hi, mut fi) = (0, 0);

    let mut truth = ValueRecord::new(id);
    for f in &chosen {
        let (x, y) = if is_money(f) {
            fi += 1;
            FOOTER_SLOTS[footer[fi - 1]]
        } else {
            hi += 1;
            HEADER_SLOTS[header[hi - 1]]
        };
        let below = match layout {
            Layout::KeyLeft => false,
            Layout::KeyAbove => true,
            Layout::Mixed => rng.gen_bool(0.5),
        };
        let key = key_text(f, cfg, rng);
        let value = field_value(f, rng);
        let ids = page.pair(&key, &value, x, y, below, rng);
        truth.fields.insert(f.name.clone(), value);
        truth.spans.insert(f.name.clone(), ids);
    }

    let mut budget = cfg.distractor_density;
    for &slot in &header[hi..] {
        if budget == 0 {
            break;
        }
        let (key, kind) = HEADER_DISTRACTORS[rng.gen_range(0..HEADER_DISTRACTORS.len())];
        let value = if kind == b'd' {
            date_value(rng)
        } else {
            digits(rng, 6)
        };
        let (x, y) = HEADER_SLOTS[slot];
        let below = rng.gen_bool(0.5);
        page.pair(key, &value, x, y, below, rng);
        budget -= 1;
    }
    for &slot in &footer[fi..] {
        if budget == 0 {
            break;
        }
        let key = pick(rng, &FOOTER_DISTRACTORS);
        let value = money_value(rng, 200_000);
        let (x, y) = FOOTER_SLOTS[slot];
        let below = rng.gen_bool(0.5);
        page.pair(key, &value, x, y, below, rng);
        budget -= 1;
    }
    if budget > 0 {
        let phone = format!("555-{}-{}", digits(rng, 3), digits(rng, 4));
        page.pair("Phone", &phone, 0.62, 0.08, false, rng);
        budget -= 1;
    }
    let rows = budget.div_ceil(3).min(TABLE_ROWS);
    if rows > 0 {
        for (h, x) in [
            ("Description", 0.05),
            ("Qty", 0.40),
            ("Unit Price", 0.55),
            ("Amount", 0.75),
        ] {
            page.phrase(h, x, TABLE_TOP);
        }
        for r in 0..rows {
            let y = TABLE_TOP + (r + 1) as f64 * TABLE_PITCH;
            let qty = rng.gen_range(1..20u64);
            let unit = rng.gen_range(100..50_000u64);
            page.phrase(pick(rng, &ITEMS), 0.05, y);
            page.phrase(&qty.to_string(), 0.40, y);
            page.phrase(&grouped(unit), 0.55, y);
            page.phrase(&grouped(unit * qty), 0.75, y);
        }
    }

    if cfg.char_noise_rate > 0.0 {
        for w in &mut page.words {
            w.text = corrupt(&w.text, cfg.char_noise_rate, rng);
        }
    }
    if cfg.bbox_jitter > 0.0 {
        let normal = Normal::new(0.0, cfg.bbox_jitter).expect("valid std");
        for block in &page.blocks {
            let (mut sx, mut sy) = (normal.sample(rng), normal.sample(rng));
            let b = block
                .iter()
                .map(|&i| page.words[i].bbox)
                .reduce(|a, b| a.union(&b))
                .expect("blocks are non-empty");
            sx = sx.clamp(-b.x0, 1.0 - b.x1);
            sy = sy.clamp(-b.y0, 1.0 - b.y1);
            for &i in block {
                let bb = &mut page.words[i].bbox;
                bb.x0 += sx;
                bb.x1 += sx;
                bb.y0 += sy;
                bb.y1 += sy;
            }
        }
    }

    let doc = Document {
        doc_id: id.to_string(),
        page_width: PAGE_W,
        page_height: PAGE_H,
        words: page.words,
        phrases: None,
    };
    (doc, truth)
}

fn confusable(c: char) -> Option<char> {
    Some(match c {
        '0' => 'O',
        'O' => '0',
        'o' => '0',
        '1' => 'l',
        'l' => '1',
        'I' => '1',
        '5' => 'S',
        'S' => '5',
        '8' => 'B',
        'B' => '8',
        '2' => 'Z',
        'e' => 'c',
        'c' => 'e',
        'a' => 'o',
        'n' => 'm',
        'm' => 'n',
        'u' => 'v',
        '.' => ',',
        ',' => '.',
        _ => return None,
    })
}

/// Per-character substitution with look-alike glyphs; other letters and
/// digits are replaced at random within their class.
pub fn corrupt(text: &str, rate: f64, rng: &mut ChaCha8Rng) -> String {
    text.chars()
        .map(|c| {
            if !rng.gen_bool(rate) {
                return c;
            }
            if let Some(s) = confusable(c) {
                s
            } else if c.is_ascii_digit() {
                char::from(b'0' + rng.gen_range(0..10u8))
            } else if c.is_ascii_lowercase() {
                char::from(b'a' + rng.gen_range(0..26u8))
            } else if c.is_ascii_uppercase() {
                char::from(b'A' + rng.gen_range(0..26u8))
            } else {
                c
            }
        })
        .collect()
}

/// Word-level agreement between a label set and generator truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub precision: f64,
    pub recall: f64,
    pub labeled: u64,
    pub truth: u64,
    pub correct: u64,
}

pub fn corruption_report(
    docs: &[Document],
    annotations: &[Annotation],
    labels: &LabelSet,
    schema: &FieldSchema,
) -> Result<CorruptionReport> {
    labels.check_against(docs, schema.len())?;
    let truth = truth_labels(docs, annotations, schema)?;
    let (mut labeled, mut gold, mut correct) = (0u64, 0u64, 0u64);
    for (l, t) in labels.docs.iter().zip(&truth.docs) {
        for (&a, &b) in l.labels.iter().zip(&t.labels) {
            labeled += u64::from(a != 0);
            gold += u64::from(b != 0);
            correct += u64::from(a != 0 && a == b);
        }
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(CorruptionReport {
        precision: ratio(correct, labeled),
        recall: ratio(correct, gold),
        labeled,
        truth: gold,
        correct,
    })
}
