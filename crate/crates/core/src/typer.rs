//! Rule-based data-type tagger gating which phrases may be field values.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Number,
    Date,
    Money,
    Other,
}

impl DataType {
    const ALL: [DataType; 4] = [
        DataType::Number,
        DataType::Date,
        DataType::Money,
        DataType::Other,
    ];

    fn bit(self) -> u8 {
        match self {
            DataType::Number => 1,
            DataType::Date => 2,
            DataType::Money => 4,
            DataType::Other => 8,
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DataType::Number => "number",
            DataType::Date => "date",
            DataType::Money => "money",
            DataType::Other => "other",
        };
        f.write_str(s)
    }
}

/// Small set of [`DataType`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TypeSet(u8);

impl TypeSet {
    pub fn of(types: &[DataType]) -> Self {
        TypeSet(types.iter().fold(0, |acc, t| acc | t.bit()))
    }

    pub fn contains(&self, t: DataType) -> bool {
        self.0 & t.bit() != 0
    }

    pub fn intersects(&self, other: &TypeSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = DataType> + '_ {
        DataType::ALL.into_iter().filter(|t| self.contains(*t))
    }
}

struct Rules {
    money: Regex,
    numeric_date: Regex,
    iso_date: Regex,
    month_date: Regex,
    number: Regex,
    prefixed_number: Regex,
}

const MONTH: &str = r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)\.?";

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        // currency marker with any digits, or grouped/decimal amounts with cents
        money: Regex::new(
            r"(?ix)^
            (?:
                (?:[$€£¥]|usd|eur|gbp|cad|aud)\s?-?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d{1,2})?
              | -?(?:\d{1,3}(?:,\d{3})+|\d+)\.\d{2}\s?(?:[$€£¥]|usd|eur|gbp|cad|aud)?
              | -?\d{1,3}(?:,\d{3})+
            )$",
        )
        .unwrap(),
        numeric_date: Regex::new(r"^\d{1,2}[/.\-]\d{1,2}[/.\-](?:\d{4}|\d{2})$").unwrap(),
        iso_date: Regex::new(r"^\d{4}[/.\-]\d{1,2}[/.\-]\d{1,2}$").unwrap(),
        month_date: Regex::new(&format!(
            r"(?i)^(?:{m}\s+\d{{1,2}}(?:st|nd|rd|th)?,?\s+\d{{4}}|\d{{1,2}}(?:st|nd|rd|th)?\s+{m},?\s+\d{{4}}|{m}\s+\d{{4}})$",
            m = MONTH
        ))
        .unwrap(),
        number: Regex::new(r"^#?\s?\d[\d\-/.,\s]*$").unwrap(),
        prefixed_number: Regex::new(r"^#?[A-Za-z]{1,3}[\-#/.]?\s?\d{3,}[\d\-/]*$").unwrap(),
    })
}

/// Types a phrase or word. Dates never double as numbers; money always does.
pub fn type_of(text: &str) -> Result<TypeSet> {
    let t = text.trim();
    if t.is_empty() {
        return Err(Error::validation("cannot type empty text"));
    }
    let r = rules();
    let collapsed: String = t.split_whitespace().collect::<Vec<_>>().join(" ");
    let t = collapsed.as_str();
    if r.numeric_date.is_match(t) || r.iso_date.is_match(t) || r.month_date.is_match(t) {
        return Ok(TypeSet::of(&[DataType::Date]));
    }
    if r.money.is_match(t) {
        return Ok(TypeSet::of(&[DataType::Money, DataType::Number]));
    }
    if r.number.is_match(t) || r.prefixed_number.is_match(t) {
        return Ok(TypeSet::of(&[DataType::Number]));
    }
    Ok(TypeSet::of(&[DataType::Other]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use DataType::*;

    fn ty(s: &str) -> TypeSet {
        type_of(s).unwrap()
    }

    #[test]
    fn table() {
        let cases: &[(&str, &[DataType])] = &[
            ("$1,234.56", &[Money, Number]),
            ("1,234.56", &[Money, Number]),
            ("USD 1,234.56", &[Money, Number]),
            ("$500", &[Money, Number]),
            ("€ 12.00", &[Money, Number]),
            ("1234.56", &[Money, Number]),
            ("01/31/2020", &[Date]),
            ("2020-01-31", &[Date]),
            ("31.01.2020", &[Date]),
            ("Jan 31, 2020", &[Date]),
            ("January 3 2020", &[Date]),
            ("3 Feb 2021", &[Date]),
            ("Sept. 9, 2019", &[Date]),
            ("2020", &[Number]),
            ("48213", &[Number]),
            ("#58213", &[Number]),
            ("INV-48213", &[Number]),
            ("PO12345", &[Number]),
            ("AB204911", &[Number]),
            ("555-201-3344", &[Number]),
            ("hello", &[Other]),
            ("Invoice #", &[Other]),
            ("P.O. Number", &[Other]),
            ("INVOICE-12", &[Other]),
            ("AB12", &[Other]),
            ("Total", &[Other]),
        ];
        for (text, want) in cases {
            assert_eq!(ty(text), TypeSet::of(want), "{text}");
        }
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(type_of("   ").is_err());
    }

    #[test]
    fn typeset_ops() {
        let a = TypeSet::of(&[Number, Money]);
        assert!(a.contains(Money));
        assert!(!a.contains(Date));
        assert!(a.intersects(&TypeSet::of(&[Number])));
        assert!(!a.intersects(&TypeSet::of(&[Date])));
        assert_eq!(a.iter().collect::<Vec<_>>(), vec![Number, Money]);
    }
}
