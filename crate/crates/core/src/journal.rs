//! Journal records, delimited-text ingestion and per-department candidate pools.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// Currency amount in integer minor units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Amount(pub i64);

impl Amount {
    pub fn minor(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// Renders the amount as a plain decimal string with `scale` fractional digits.
    pub fn to_decimal_string(self, scale: u32) -> String {
        if scale == 0 {
            return self.0.to_string();
        }
        let unit = 10i64.pow(scale);
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let unit = unit as u64;
        format!(
            "{sign}{}.{:0width$}",
            abs / unit,
            abs % unit,
            width = scale as usize
        )
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One cash-outflow bookkeeping record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub entry_id: String,
    pub posting_date: NaiveDate,
    pub department: String,
    pub account_code: String,
    pub counterparty: String,
    pub amount: Amount,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memo: Option<String>,
}

/// Inclusive date range of the audited financial period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditPeriod {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl AuditPeriod {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

/// Column mapping and number format of a journal file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JournalFormat {
    pub delimiter: char,
    /// When `None`, entry ids are synthesized from the data row number.
    pub entry_id_column: Option<String>,
    pub date_column: String,
    pub department_column: String,
    pub account_column: String,
    pub counterparty_column: String,
    pub amount_column: String,
    /// Read when present in the header; never required.
    pub memo_column: Option<String>,
    pub decimal_scale: u32,
    pub thousands_separator: Option<char>,
    pub audit_period: Option<AuditPeriod>,
}

impl Default for JournalFormat {
    fn default() -> Self {
        Self {
            delimiter: ',',
            entry_id_column: Some("entry_id".into()),
            date_column: "posting_date".into(),
            department_column: "department".into(),
            account_column: "account_code".into(),
            counterparty_column: "counterparty".into(),
            amount_column: "amount".into(),
            memo_column: Some("memo".into()),
            decimal_scale: 2,
            thousands_separator: Some(','),
            audit_period: None,
        }
    }
}

/// A data row that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based data row number (the header is not counted).
    pub row: usize,
    pub reason: String,
}

/// Result of ingesting one journal file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedJournal {
    pub entries: Vec<JournalEntry>,
    pub rejects: Vec<Reject>,
    pub total_rows: usize,
}

struct ColumnIndex {
    entry_id: Option<usize>,
    date: usize,
    department: usize,
    account: usize,
    counterparty: usize,
    amount: usize,
    memo: Option<usize>,
}

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, format: &JournalFormat) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let require = |name: &str| {
            find(name).ok_or_else(|| {
                AuditError::Format(format!("header is missing required column `{name}`"))
            })
        };
        let entry_id = match &format.entry_id_column {
            Some(name) => Some(require(name)?),
            None => None,
        };
        Ok(Self {
            entry_id,
            date: require(&format.date_column)?,
            department: require(&format.department_column)?,
            account: require(&format.account_column)?,
            counterparty: require(&format.counterparty_column)?,
            amount: require(&format.amount_column)?,
            memo: format.memo_column.as_deref().and_then(find),
        })
    }
}

/// Parses an ISO `YYYY-MM-DD` date, naming the offending component on failure.
pub fn parse_date(raw: &str) -> std::result::Result<NaiveDate, String> {
    let raw = raw.trim();
    let parts: Vec<&str> = raw.split('-').collect();
    if parts.len() != 3 || parts[0].len() != 4 {
        return Err(format!("unparseable date `{raw}`"));
    }
    let numbers: Option<Vec<u32>> = parts.iter().map(|p| p.parse::<u32>().ok()).collect();
    let Some(numbers) = numbers else {
        return Err(format!("unparseable date `{raw}`"));
    };
    let (year, month, day) = (numbers[0] as i32, numbers[1], numbers[2]);
    if !(1..=12).contains(&month) {
        return Err("invalid month".into());
    }
    NaiveDate::from_ymd_opt(year, month, day).ok_or_else(|| "invalid day".into())
}

/// Parses a decimal amount string into minor units at the given scale.
pub fn parse_amount(
    raw: &str,
    scale: u32,
    thousands: Option<char>,
) -> std::result::Result<Amount, String> {
    let mut text: String = raw.trim().to_string();
    if let Some(sep) = thousands {
        text.retain(|c| c != sep);
    }
    if text.is_empty() {
        return Err("missing amount".into());
    }
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(&text)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    let is_digits = |s: &str| s.chars().all(|c| c.is_ascii_digit());
    if (int_part.is_empty() && frac_part.is_empty())
        || !is_digits(int_part)
        || !is_digits(frac_part)
    {
        return Err(format!("non-numeric amount `{}`", raw.trim()));
    }
    if frac_part.len() > scale as usize {
        return Err(format!(
            "amount `{}` has more than {scale} decimal places",
            raw.trim()
        ));
    }
    let overflow = || format!("amount `{}` out of range", raw.trim());
    let unit = 10i64.checked_pow(scale).ok_or_else(overflow)?;
    let whole: i64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| overflow())?
    };
    let mut frac: i64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().map_err(|_| overflow())?
    };
    for _ in frac_part.len()..scale as usize {
        frac *= 10;
    }
    let minor = whole
        .checked_mul(unit)
        .and_then(|w| w.checked_add(frac))
        .ok_or_else(overflow)?;
    Ok(Amount(if negative { -minor } else { minor }))
}

/// Reads delimited journal text. Rows that fail validation are reported in
/// `rejects` with their row number; accepted rows keep file order.
pub fn parse_journals<R: Read>(source: R, format: &JournalFormat) -> Result<ParsedJournal> {
    let delimiter = u8::try_from(format.delimiter)
        .map_err(|_| AuditError::Format("delimiter must be a single-byte character".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let header = reader
        .headers()
        .map_err(|e| AuditError::Format(e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(AuditError::EmptyInput("journal has no header row".into()));
    }
    let columns = ColumnIndex::resolve(&header, format)?;

    let mut entries = Vec::new();
    let mut rejects = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut total_rows = 0;

    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        total_rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject {
                    row,
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        match parse_row(&record, row, &columns, format) {
            Ok(entry) => {
                if !seen_ids.insert(entry.entry_id.clone()) {
                    rejects.push(Reject {
                        row,
                        reason: format!("duplicate entry id `{}`", entry.entry_id),
                    });
                } else {
                    entries.push(entry);
                }
            }
            Err(reason) => rejects.push(Reject { row, reason }),
        }
    }

    if total_rows == 0 {
        return Err(AuditError::EmptyInput("journal has no data rows".into()));
    }
    Ok(ParsedJournal {
        entries,
        rejects,
        total_rows,
    })
}

fn parse_row(
    record: &csv::StringRecord,
    row: usize,
    columns: &ColumnIndex,
    format: &JournalFormat,
) -> std::result::Result<JournalEntry, String> {
    let field = |idx: usize, name: &str| -> std::result::Result<String, String> {
        let value = record.get(idx).map(str::trim).unwrap_or("");
        if value.is_empty() {
            Err(format!("missing {name}"))
        } else {
            Ok(value.to_string())
        }
    };

    let entry_id = match columns.entry_id {
        Some(idx) => field(idx, "entry id")?,
        None => format!("row-{row}"),
    };
    let posting_date = parse_date(&field(columns.date, "date")?)?;
    if let Some(period) = &format.audit_period {
        if !period.contains(posting_date) {
            return Err("date outside audit period".into());
        }
    }
    let amount = parse_amount(
        &field(columns.amount, "amount")?,
        format.decimal_scale,
        format.thousands_separator,
    )?;
    if amount.0 <= 0 {
        return Err("amount is not a positive cash outflow".into());
    }
    let memo = columns
        .memo
        .and_then(|idx| record.get(idx))
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(String::from);

    Ok(JournalEntry {
        entry_id,
        posting_date,
        department: field(columns.department, "department")?,
        account_code: field(columns.account, "account code")?,
        counterparty: field(columns.counterparty, "counterparty")?,
        amount,
        memo,
    })
}

/// Writes entries in the layout `parse_journals` reads back with the same format.
pub fn write_journal<W: Write>(
    entries: &[JournalEntry],
    format: &JournalFormat,
    sink: W,
) -> Result<()> {
    let delimiter = u8::try_from(format.delimiter)
        .map_err(|_| AuditError::Format("delimiter must be a single-byte character".into()))?;
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(sink);
    let io = |e: csv::Error| AuditError::Format(e.to_string());

    let mut header: Vec<&str> = Vec::new();
    if let Some(id) = &format.entry_id_column {
        header.push(id);
    }
    header.extend([
        format.date_column.as_str(),
        format.department_column.as_str(),
        format.account_column.as_str(),
        format.counterparty_column.as_str(),
        format.amount_column.as_str(),
    ]);
    if let Some(memo) = &format.memo_column {
        header.push(memo);
    }
    writer.write_record(&header).map_err(io)?;

    for e in entries {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if format.entry_id_column.is_some() {
            row.push(e.entry_id.clone());
        }
        row.push(e.posting_date.format("%Y-%m-%d").to_string());
        row.push(e.department.clone());
        row.push(e.account_code.clone());
        row.push(e.counterparty.clone());
        row.push(e.amount.to_decimal_string(format.decimal_scale));
        if format.memo_column.is_some() {
            row.push(e.memo.clone().unwrap_or_default());
        }
        writer.write_record(&row).map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| AuditError::Format(e.to_string()))?;
    Ok(())
}

/// Writes the rejects report (`row,reason`).
pub fn write_rejects<W: Write>(rejects: &[Reject], sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| AuditError::Format(e.to_string());
    writer.write_record(["row", "reason"]).map_err(io)?;
    for r in rejects {
        writer
            .write_record([r.row.to_string(), r.reason.clone()])
            .map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| AuditError::Format(e.to_string()))?;
    Ok(())
}

/// Keeps entries whose account code starts with one of `prefixes`, in order.
/// An empty prefix set keeps nothing.
pub fn filter_cash_outflows(entries: &[JournalEntry], prefixes: &[String]) -> Vec<JournalEntry> {
    entries
        .iter()
        .filter(|e| {
            prefixes
                .iter()
                .any(|p| e.account_code.starts_with(p.as_str()))
        })
        .cloned()
        .collect()
}

/// Distinct department codes in lexicographic order.
pub fn departments(entries: &[JournalEntry]) -> Vec<String> {
    entries
        .iter()
        .map(|e| e.department.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Payment-amount pool (grid axis X) and counterparty pool (grid axis Y) for
/// one department, together with the entries they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePools {
    pub department: String,
    /// Distinct amounts, ascending.
    pub payments: Vec<Amount>,
    /// Distinct counterparties, lexicographic.
    pub names: Vec<String>,
    pub entry_index: BTreeMap<(Amount, String), Vec<String>>,
    /// The department's entries in input order.
    pub entries: Vec<JournalEntry>,
}

impl CandidatePools {
    /// Grid width (payments) and height (names).
    pub fn dims(&self) -> (usize, usize) {
        (self.payments.len(), self.names.len())
    }

    /// Entry ids booked at a 0-based grid coordinate.
    pub fn cell(&self, x: usize, y: usize) -> &[String] {
        match (self.payments.get(x), self.names.get(y)) {
            (Some(&amount), Some(name)) => self
                .entry_index
                .get(&(amount, name.clone()))
                .map(Vec::as_slice)
                .unwrap_or(&[]),
            _ => &[],
        }
    }
}

/// Builds the candidate pools of one department.
pub fn build_pools(entries: &[JournalEntry], department: &str) -> Result<CandidatePools> {
    let scoped: Vec<JournalEntry> = entries
        .iter()
        .filter(|e| e.department == department)
        .cloned()
        .collect();
    if scoped.is_empty() {
        return Err(AuditError::EmptyScope(department.to_string()));
    }

    let payments: BTreeSet<Amount> = scoped.iter().map(|e| e.amount).collect();
    let names: BTreeSet<String> = scoped.iter().map(|e| e.counterparty.clone()).collect();
    let mut entry_index: BTreeMap<(Amount, String), Vec<String>> = BTreeMap::new();
    for e in &scoped {
        entry_index
            .entry((e.amount, e.counterparty.clone()))
            .or_default()
            .push(e.entry_id.clone());
    }

    Ok(CandidatePools {
        department: department.to_string(),
        payments: payments.into_iter().collect(),
        names: names.into_iter().collect(),
        entry_index,
        entries: scoped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, date: &str, name: &str, amount: i64) -> JournalEntry {
        JournalEntry {
            entry_id: id.into(),
            posting_date: parse_date(date).unwrap(),
            department: "D1".into(),
            account_code: "5110".into(),
            counterparty: name.into(),
            amount: Amount(amount),
            memo: None,
        }
    }

    const HEADER: &str = "entry_id,posting_date,department,account_code,counterparty,amount,memo\n";

    #[test]
    fn three_valid_rows_pass_through() {
        let text = format!(
            "{HEADER}e1,2019-01-05,D1,5110,Acme,100.00,\ne2,2019-02-05,D1,5110,Acme,100.00,rent\ne3,2019-03-05,D2,5310,Bolt,250.5,\n"
        );
        let parsed = parse_journals(text.as_bytes(), &JournalFormat::default()).unwrap();
        assert_eq!(parsed.entries.len(), 3);
        assert!(parsed.rejects.is_empty());
        assert_eq!(parsed.entries[1].memo.as_deref(), Some("rent"));
        assert_eq!(parsed.entries[2].amount, Amount(25050));
    }

    #[test]
    fn thousands_separator_and_scale() {
        let text = format!("{HEADER}e1,2019-01-05,D1,5110,Acme,\"12,000.50\",\n");
        let parsed = parse_journals(text.as_bytes(), &JournalFormat::default()).unwrap();
        // 12000 * 10^2 + 50
        assert_eq!(parsed.entries[0].amount, Amount(1_200_050));
    }

    #[test]
    fn invalid_month_is_rejected_with_reason() {
        let text = format!(
            "{HEADER}e1,2019-13-01,D1,5110,Acme,100,\ne2,2019-02-30,D1,5110,Acme,100,\ne3,2019-02-01,D1,5110,Acme,abc,\n"
        );
        let parsed = parse_journals(text.as_bytes(), &JournalFormat::default()).unwrap();
        assert!(parsed.entries.is_empty());
        assert_eq!(
            parsed.rejects[0],
            Reject {
                row: 1,
                reason: "invalid month".into()
            }
        );
        assert_eq!(parsed.rejects[1].reason, "invalid day");
        assert!(parsed.rejects[2].reason.starts_with("non-numeric amount"));
        assert_eq!(parsed.total_rows, 3);
    }

    #[test]
    fn duplicate_ids_and_nonpositive_amounts_are_rejected() {
        let text = format!(
            "{HEADER}e1,2019-01-05,D1,5110,Acme,100,\ne1,2019-02-05,D1,5110,Acme,100,\ne3,2019-02-05,D1,5110,Acme,-5,\n"
        );
        let parsed = parse_journals(text.as_bytes(), &JournalFormat::default()).unwrap();
        assert_eq!(parsed.entries.len(), 1);
        assert_eq!(parsed.rejects.len(), 2);
        assert!(parsed.rejects[0].reason.contains("duplicate"));
    }

    #[test]
    fn audit_period_bounds_are_enforced() {
        let format = JournalFormat {
            audit_period: Some(AuditPeriod {
                start: parse_date("2019-01-01").unwrap(),
                end: parse_date("2019-12-31").unwrap(),
            }),
            ..JournalFormat::default()
        };
        let text =
            format!("{HEADER}e1,2019-12-31,D1,5110,Acme,1,\ne2,2020-01-01,D1,5110,Acme,1,\n");
        let parsed = parse_journals(text.as_bytes(), &format).unwrap();
        assert_eq!(parsed.entries.len(), 1);
        assert_eq!(parsed.rejects[0].reason, "date outside audit period");
    }

    #[test]
    fn header_and_empty_errors() {
        assert!(matches!(
            parse_journals("".as_bytes(), &JournalFormat::default()),
            Err(AuditError::EmptyInput(_))
        ));
        assert!(matches!(
            parse_journals(HEADER.as_bytes(), &JournalFormat::default()),
            Err(AuditError::EmptyInput(_))
        ));
        assert!(matches!(
            parse_journals("id,date\n1,2\n".as_bytes(), &JournalFormat::default()),
            Err(AuditError::Format(_))
        ));
    }

    #[test]
    fn custom_delimiter_and_synthesized_ids() {
        let format = JournalFormat {
            delimiter: ';',
            entry_id_column: None,
            decimal_scale: 0,
            ..JournalFormat::default()
        };
        let text = "posting_date;department;account_code;counterparty;amount\n2019-01-05;D1;5110;Acme;1,000\n";
        let parsed = parse_journals(text.as_bytes(), &format).unwrap();
        assert_eq!(parsed.entries[0].entry_id, "row-1");
        assert_eq!(parsed.entries[0].amount, Amount(1000));
    }

    #[test]
    fn excess_precision_is_rejected() {
        assert!(parse_amount("1.234", 2, None).is_err());
        assert_eq!(parse_amount("1.2", 2, None), Ok(Amount(120)));
        assert_eq!(parse_amount(".5", 2, None), Ok(Amount(50)));
        assert!(parse_amount(".", 2, None).is_err());
    }

    #[test]
    fn write_then_parse_is_lossless() {
        let entries = vec![
            entry("a", "2019-01-05", "Acme, Inc", 123_456),
            entry("b", "2019-02-05", "Bolt", 7),
        ];
        let mut buf = Vec::new();
        write_journal(&entries, &JournalFormat::default(), &mut buf).unwrap();
        let parsed = parse_journals(buf.as_slice(), &JournalFormat::default()).unwrap();
        assert_eq!(parsed.entries, entries);
    }

    #[test]
    fn filter_keeps_prefix_matches_in_order() {
        let mut entries: Vec<JournalEntry> = (0..5)
            .map(|i| entry(&format!("e{i}"), "2019-01-01", "A", 1))
            .collect();
        for (e, code) in entries
            .iter_mut()
            .zip(["5101", "5201", "5301", "4101", "5105"])
        {
            e.account_code = code.into();
        }
        let all = filter_cash_outflows(&entries, &["".into()]);
        assert_eq!(all, entries);
        assert!(filter_cash_outflows(&entries, &["9".into()]).is_empty());

        let prefixes = vec!["51".to_string(), "53".to_string()];
        let kept = filter_cash_outflows(&entries, &prefixes);
        let oracle: Vec<_> = entries
            .iter()
            .filter(|e| e.account_code.starts_with("51") || e.account_code.starts_with("53"))
            .cloned()
            .collect();
        assert_eq!(kept, oracle);
        let ids: Vec<_> = kept.iter().map(|e| e.entry_id.as_str()).collect();
        assert_eq!(ids, ["e0", "e2", "e4"]);
    }

    #[test]
    fn pools_dedup_and_sort() {
        let entries = vec![
            entry("1", "2019-01-01", "B", 250),
            entry("2", "2019-01-01", "A", 100),
            entry("3", "2019-02-01", "A", 100),
        ];
        let pools = build_pools(&entries, "D1").unwrap();
        assert_eq!(pools.payments, vec![Amount(100), Amount(250)]);
        assert_eq!(pools.names, vec!["A", "B"]);
        assert_eq!(pools.cell(0, 0), ["2", "3"]);
        assert_eq!(pools.cell(1, 1), ["1"]);
        assert!(pools.cell(1, 0).is_empty());
        assert!(matches!(
            build_pools(&entries, "D9"),
            Err(AuditError::EmptyScope(_))
        ));
    }

    #[test]
    fn singleton_pool_has_one_cell() {
        let pools = build_pools(&[entry("1", "2019-01-01", "A", 5)], "D1").unwrap();
        assert_eq!(pools.dims(), (1, 1));
        assert_eq!(pools.entry_index.len(), 1);
    }

    #[test]
    fn grid_position_two_three_addresses_second_payment_third_name() {
        let entries = vec![
            entry("1", "2019-01-01", "A", 100),
            entry("2", "2019-01-01", "B", 200),
            entry("3", "2019-01-01", "C", 200),
            entry("4", "2019-01-01", "D", 300),
        ];
        let pools = build_pools(&entries, "D1").unwrap();
        // 1-based (2, 3) is 0-based (1, 2)
        assert_eq!(pools.payments[1], Amount(200));
        assert_eq!(pools.names[2], "C");
        assert_eq!(pools.cell(1, 2), ["3"]);
    }
}
