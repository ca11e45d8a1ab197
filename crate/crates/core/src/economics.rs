//! Phone price as a revenue proxy: each subscriber is priced by the model
//! of their most used handset.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::ingest::{CdrRecord, CdrTable, Country, Tac, TacPriceTable};
use crate::mobility::Classification;
use crate::time::Instant;

/// Most frequent known TAC; ties go to the one seen most recently.
fn modal_price(tacs: impl Iterator<Item = (Instant, Tac)>, prices: &TacPriceTable) -> Option<f64> {
    // TAC → (count, last timestamp, last position).
    let mut seen: BTreeMap<Tac, (u64, Instant, usize)> = BTreeMap::new();
    for (pos, (ts, tac)) in tacs.enumerate() {
        if prices.get(tac).is_none() {
            continue;
        }
        let e = seen.entry(tac).or_insert((0, ts, pos));
        e.0 += 1;
        if (ts, pos) >= (e.1, e.2) {
            e.1 = ts;
            e.2 = pos;
        }
    }
    let (tac, _) = seen.into_iter().max_by_key(|(_, v)| *v)?;
    prices.price(tac)
}

/// Price of the subscriber's modal handset, `None` when no record carries a
/// priced TAC.
pub fn subscriber_price(records: &[CdrRecord], prices: &TacPriceTable) -> Option<f64> {
    let mut tacs: Vec<(Instant, Tac)> = records.iter().filter_map(|r| Some((r.timestamp, r.tac?))).collect();
    tacs.sort_by_key(|t| t.0);
    modal_price(tacs.into_iter(), prices)
}

/// Price per table subscriber index.
pub fn subscriber_prices(table: &CdrTable, prices: &TacPriceTable) -> Vec<Option<f64>> {
    table
        .by_subscriber()
        .map(|(_, rows)| modal_price(rows.iter().filter_map(|r| Some((r.timestamp, r.tac()?))), prices))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IncomeProfile {
    pub n_subscribers: u64,
    pub n_priced: u64,
    /// Quantiles are zero when `defined` is false.
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub coverage: f64,
    /// At least one subscriber is priced.
    pub defined: bool,
}

/// Linear interpolation between order statistics of a sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quartiles over the priced subset of one subscriber set.
pub fn income_profile(prices: impl IntoIterator<Item = Option<f64>>) -> IncomeProfile {
    let mut n = 0u64;
    let mut priced = Vec::new();
    for p in prices {
        n += 1;
        priced.extend(p);
    }
    priced.sort_by(f64::total_cmp);
    let defined = !priced.is_empty();
    let q = |p| if defined { quantile(&priced, p) } else { 0.0 };
    IncomeProfile {
        n_subscribers: n,
        n_priced: priced.len() as u64,
        median: q(0.5),
        q25: q(0.25),
        q75: q(0.75),
        coverage: if n == 0 { 0.0 } else { priced.len() as f64 / n as f64 },
        defined,
    }
}

/// One profile per origin country over all subscribers.
pub fn income_by_country(classes: &Classification, prices: &[Option<f64>]) -> BTreeMap<Country, IncomeProfile> {
    let mut groups: BTreeMap<Country, Vec<Option<f64>>> = BTreeMap::new();
    for (class, p) in classes.iter().zip(prices) {
        groups.entry(class.origin_country).or_default().push(*p);
    }
    groups.into_par_iter().map(|(c, ps)| (c, income_profile(ps))).collect()
}

pub const INCOME_HEADER: [&str; 7] = ["country", "n", "priced", "median", "q25", "q75", "coverage"];

/// Quantile columns are empty for undefined profiles.
pub fn write_income_by_country<W: Write>(w: W, profiles: &BTreeMap<Country, IncomeProfile>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(INCOME_HEADER)?;
    for (country, p) in profiles {
        let q = |x: f64| if p.defined { format!("{x:.2}") } else { String::new() };
        w.write_record([
            country.as_str(),
            &p.n_subscribers.to_string(),
            &p.n_priced.to_string(),
            &q(p.median),
            &q(p.q25),
            &q(p.q75),
            &format!("{:.6}", p.coverage),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::ingest::{Service, TacPrice};
    use crate::mobility::classify_subscribers;

    fn table(entries: &[(&str, f64)]) -> TacPriceTable {
        TacPriceTable::new(entries.iter().map(|&(tac, price)| {
            (
                Tac::new(tac).unwrap(),
                TacPrice {
                    brand: "b".into(),
                    model: "m".into(),
                    price_usd: price,
                },
            )
        }))
        .unwrap()
    }

    fn rec(sub: &str, ts: i64, tac: Option<&str>, country: &str) -> CdrRecord {
        CdrRecord {
            subscriber_id: sub.into(),
            timestamp: 1_436_000_000 + ts,
            tower_id: "T1".into(),
            registry_country: Country::new(country).unwrap(),
            tac: tac.map(|t| Tac::new(t).unwrap()),
            service: Service::Data,
        }
    }

    #[test]
    fn single_tac() {
        let prices = table(&[("35875106", 420.0)]);
        let recs = [rec("u", 0, Some("35875106"), "ES"), rec("u", 5, Some("35875106"), "ES")];
        assert_eq!(subscriber_price(&recs, &prices), Some(420.0));
    }

    #[test]
    fn modal_tac_wins() {
        let prices = table(&[("11111111", 100.0), ("22222222", 900.0)]);
        let recs = [
            rec("u", 0, Some("11111111"), "ES"),
            rec("u", 1, Some("11111111"), "ES"),
            rec("u", 2, Some("22222222"), "ES"),
            rec("u", 3, Some("11111111"), "ES"),
        ];
        assert_eq!(subscriber_price(&recs, &prices), Some(100.0));
    }

    #[test]
    fn ties_go_to_most_recent() {
        let prices = table(&[("11111111", 100.0), ("22222222", 900.0)]);
        let recs = [rec("u", 9, Some("11111111"), "ES"), rec("u", 3, Some("22222222"), "ES")];
        assert_eq!(subscriber_price(&recs, &prices), Some(100.0));
        let recs = [rec("u", 1, Some("11111111"), "ES"), rec("u", 3, Some("22222222"), "ES")];
        assert_eq!(subscriber_price(&recs, &prices), Some(900.0));
    }

    #[test]
    fn unknown_tacs_are_ignored() {
        let prices = table(&[("11111111", 100.0)]);
        let recs = [
            rec("u", 0, Some("99999999"), "ES"),
            rec("u", 1, Some("99999999"), "ES"),
            rec("u", 2, Some("11111111"), "ES"),
        ];
        assert_eq!(subscriber_price(&recs, &prices), Some(100.0));
        assert_eq!(subscriber_price(&[rec("u", 0, None, "ES")], &prices), None);
    }

    #[test]
    fn table_prices_match_record_prices() {
        let prices = table(&[("11111111", 100.0), ("22222222", 900.0)]);
        let recs = [
            rec("a", 0, Some("11111111"), "ES"),
            rec("a", 4, Some("22222222"), "ES"),
            rec("b", 0, None, "FR"),
        ];
        let t = CdrTable::from_records(&recs);
        assert_eq!(subscriber_prices(&t, &prices), [Some(900.0), None]);
    }

    #[test]
    fn quartile_examples() {
        assert_eq!(income_profile([Some(100.0), Some(200.0), Some(300.0)]).median, 200.0);
        assert_eq!(income_profile([Some(100.0), Some(200.0)]).median, 150.0);
        let p = income_profile((0..10).map(|i| (i < 4).then_some(100.0 * f64::from(i))));
        assert_eq!(p.coverage, 0.4);
        assert_eq!((p.n_subscribers, p.n_priced), (10, 4));
        assert_eq!((p.q25, p.median, p.q75), (75.0, 150.0, 225.0));
    }

    #[test]
    fn empty_is_undefined() {
        let p = income_profile([None, None]);
        assert!(!p.defined);
        assert_eq!((p.median, p.coverage), (0.0, 0.0));
        assert_eq!(income_profile([]).n_subscribers, 0);
    }

    #[test]
    fn per_country_csv() {
        let prices = table(&[("11111111", 100.0)]);
        let recs = [rec("a", 0, Some("11111111"), "ES"), rec("b", 0, None, "FR")];
        let t = CdrTable::from_records(&recs);
        let c = classify_subscribers(&t, Country::new("AD").unwrap());
        let by = income_by_country(&c, &subscriber_prices(&t, &prices));
        let mut buf = Vec::new();
        write_income_by_country(&mut buf, &by).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "country,n,priced,median,q25,q75,coverage\nES,1,1,100.00,100.00,100.00,1.000000\nFR,1,0,,,,0.000000\n"
        );
    }

    proptest! {
        #[test]
        fn quantiles_ordered_and_unpriced_neutral(
            prices in proptest::collection::vec(proptest::option::of(1.0f64..2000.0), 1..40),
            extra in 0usize..5,
        ) {
            let p = income_profile(prices.iter().copied());
            prop_assert!(p.q25 <= p.median && p.median <= p.q75);
            prop_assert!((0.0..=1.0).contains(&p.coverage));
            let mut more = prices.clone();
            more.extend(std::iter::repeat_n(None, extra));
            let q = income_profile(more.iter().copied());
            prop_assert_eq!((q.q25, q.median, q.q75), (p.q25, p.median, p.q75));
            let mut rev = prices.clone();
            rev.reverse();
            prop_assert_eq!(income_profile(rev), p);
        }
    }
}
