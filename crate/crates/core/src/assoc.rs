//! Association metrics over theme and gender counts.
//!
//! Relative theme association between groups A and B is
//! `D_A,t / D_A - D_B,t / D_B` per theme. Gender attribution is
//! `(D_pride,g - D_shame,g) / D_g` with `D_g = D_pride,g + D_shame,g`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Industry;
use crate::error::{Error, Result};
use crate::excerpt::Emotion;
use crate::norms::{Gender, NormStats};

/// Dialogue counts of one group, per theme, plus the group total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub group: String,
    pub total: u64,
    pub by_theme: BTreeMap<String, u64>,
}

impl GroupCounts {
    /// Group whose total is the sum over its themes.
    pub fn partitioned(group: &str, by_theme: BTreeMap<String, u64>) -> Self {
        GroupCounts {
            group: group.into(),
            total: by_theme.values().sum(),
            by_theme,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.total == 0 {
            return Err(Error::ZeroTotal(self.group.clone()));
        }
        let covered: u64 = self.by_theme.values().sum();
        if covered > self.total {
            return Err(Error::InvalidCounts(format!(
                "group {}: theme counts sum to {covered} but total is {}",
                self.group, self.total
            )));
        }
        Ok(())
    }

    fn share(&self, theme: &str) -> f64 {
        self.by_theme.get(theme).copied().unwrap_or(0) as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeAssociation {
    pub theme: String,
    pub delta: f64,
}

/// Delta for every theme seen in either group, sorted by |delta|
/// descending and then by theme name. Positive means stronger association
/// with `a`.
pub fn theme_association(a: &GroupCounts, b: &GroupCounts) -> Result<Vec<ThemeAssociation>> {
    a.validate()?;
    b.validate()?;
    let themes: BTreeSet<&String> = a.by_theme.keys().chain(b.by_theme.keys()).collect();
    let mut out: Vec<ThemeAssociation> = themes
        .into_iter()
        .map(|t| ThemeAssociation {
            theme: t.clone(),
            delta: a.share(t) - b.share(t),
        })
        .collect();
    out.sort_by(|x, y| {
        y.delta
            .abs()
            .total_cmp(&x.delta.abs())
            .then_with(|| x.theme.cmp(&y.theme))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderAttribution {
    pub gender: Gender,
    pub d_pride: u64,
    pub d_shame: u64,
    pub d_total: u64,
    pub delta: f64,
}

pub fn attribution(gender: Gender, d_pride: u64, d_shame: u64) -> Result<GenderAttribution> {
    let d_total = d_pride + d_shame;
    if d_total == 0 {
        return Err(Error::ZeroTotal(gender.to_string()));
    }
    Ok(GenderAttribution {
        gender,
        d_pride,
        d_shame,
        d_total,
        delta: (d_pride as f64 - d_shame as f64) / d_total as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndustryGenderAttribution {
    pub industry: Industry,
    pub male: Option<GenderAttribution>,
    pub female: Option<GenderAttribution>,
    /// male delta minus female delta.
    pub gap: Option<f64>,
}

/// Pride-vs-shame attribution per industry for male and female targets.
/// Norms with an unknown target gender are ignored, and a gender with no
/// norms is left out with a warning.
pub fn gender_attribution(stats: &NormStats) -> Vec<IndustryGenderAttribution> {
    let industries: BTreeSet<&Industry> = stats.rows.keys().map(|(i, _)| i).collect();
    industries
        .into_iter()
        .map(|ind| {
            let pride = stats.get(ind, Emotion::Pride);
            let shame = stats.get(ind, Emotion::Shame);
            let one = |g: Gender, p: usize, s: usize| match attribution(g, p as u64, s as u64) {
                Ok(a) => Some(a),
                Err(e) => {
                    log::warn!("{ind}: omitting {g} attribution: {e}");
                    None
                }
            };
            let male = one(Gender::Male, pride.male, shame.male);
            let female = one(Gender::Female, pride.female, shame.female);
            let gap = match (&male, &female) {
                (Some(m), Some(f)) => Some(m.delta - f.delta),
                _ => None,
            };
            IndustryGenderAttribution {
                industry: ind.clone(),
                male,
                female,
                gap,
            }
        })
        .collect()
}

/// Theme association of female against male targets within one industry.
pub fn gender_theme_delta(female: &GroupCounts, male: &GroupCounts) -> Result<Vec<ThemeAssociation>> {
    theme_association(female, male)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRow {
    pub dimension: String,
    pub group: String,
    pub theme: String,
    pub delta: f64,
}

pub fn write_association_csv<W: Write>(w: W, rows: &[AssociationRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["dimension", "group", "theme", "delta"])?;
    for r in rows {
        wtr.write_record([&r.dimension, &r.group, &r.theme, &r.delta.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_association_csv<R: std::io::Read>(r: R) -> Result<Vec<AssociationRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default().to_string();
        out.push(AssociationRow {
            dimension: field(0),
            group: field(1),
            theme: field(2),
            delta: field(3)
                .parse()
                .map_err(|_| Error::InvalidCounts(format!("bad delta `{}`", field(3))))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::GenderCounts;
    use proptest::prelude::*;

    fn group(name: &str, total: u64, themes: &[(&str, u64)]) -> GroupCounts {
        GroupCounts {
            group: name.into(),
            total,
            by_theme: themes.iter().map(|(t, n)| (t.to_string(), *n)).collect(),
        }
    }

    fn delta_of(v: &[ThemeAssociation], t: &str) -> f64 {
        v.iter().find(|a| a.theme == t).unwrap().delta
    }

    #[test]
    fn worked_examples() {
        let d = theme_association(&group("A", 100, &[("t", 10)]), &group("B", 50, &[("t", 5)])).unwrap();
        assert_eq!(d[0].delta, 0.0);
        let d = theme_association(&group("A", 100, &[("t", 20)]), &group("B", 100, &[("t", 5)])).unwrap();
        assert_eq!(d[0].delta, 0.2 - 0.05);
        assert!((d[0].delta - 0.15).abs() < 1e-15);
        let d = theme_association(&group("A", 7, &[("t", 7)]), &group("B", 3, &[("u", 3)])).unwrap();
        assert_eq!(delta_of(&d, "t"), 1.0);
        assert_eq!(delta_of(&d, "u"), -1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            theme_association(&group("A", 0, &[]), &group("B", 1, &[])),
            Err(Error::ZeroTotal(g)) if g == "A"
        ));
        assert!(matches!(
            theme_association(&group("A", 1, &[("t", 2)]), &group("B", 1, &[])),
            Err(Error::InvalidCounts(_))
        ));
    }

    #[test]
    fn sorted_by_magnitude() {
        let a = group("A", 10, &[("x", 1), ("y", 5), ("z", 4)]);
        let b = group("B", 10, &[("x", 2), ("y", 1), ("z", 7)]);
        let d = theme_association(&a, &b).unwrap();
        let names: Vec<&str> = d.iter().map(|x| x.theme.as_str()).collect();
        assert_eq!(names, ["y", "z", "x"]);
    }

    fn table_a2() -> NormStats {
        let mut s = NormStats::default();
        let mut put = |ind: Industry, emo: Emotion, male, female, not_known| {
            s.rows.insert(
                (ind, emo),
                GenderCounts {
                    male,
                    female,
                    not_known,
                    no_reason: 0,
                },
            );
        };
        put(Industry::Bollywood, Emotion::Shame, 3102, 1306, 913);
        put(Industry::Bollywood, Emotion::Pride, 1259, 326, 652);
        put(Industry::Hollywood, Emotion::Shame, 591, 246, 319);
        put(Industry::Hollywood, Emotion::Pride, 776, 236, 719);
        s
    }

    #[test]
    fn reproduces_reported_gaps() {
        let out = gender_attribution(&table_a2());
        let b = &out[0];
        assert_eq!(b.industry, Industry::Bollywood);
        let m = b.male.as_ref().unwrap();
        assert_eq!((m.d_pride, m.d_shame, m.d_total), (1259, 3102, 4361));
        assert!((m.delta - (-1843.0 / 4361.0)).abs() < 1e-15);
        assert!((m.delta + 0.4226).abs() < 5e-4);
        assert!((b.female.as_ref().unwrap().delta + 0.6005).abs() < 5e-4);
        assert!((b.gap.unwrap() - 0.18).abs() < 5e-3);
        let h = &out[1];
        assert!((h.male.as_ref().unwrap().delta - 0.1353).abs() < 5e-4);
        assert!((h.female.as_ref().unwrap().delta + 0.0207).abs() < 5e-4);
        assert!((h.gap.unwrap() - 0.16).abs() < 5e-3);
    }

    #[test]
    fn missing_gender_is_omitted() {
        let mut s = NormStats::default();
        s.rows.insert(
            (Industry::Hollywood, Emotion::Pride),
            GenderCounts {
                male: 4,
                female: 0,
                not_known: 9,
                no_reason: 0,
            },
        );
        let out = gender_attribution(&s);
        assert_eq!(out[0].male.as_ref().unwrap().delta, 1.0);
        assert!(out[0].female.is_none() && out[0].gap.is_none());
        assert_eq!(attribution(Gender::Male, 5, 5).unwrap().delta, 0.0);
    }

    #[test]
    fn gender_theme_examples() {
        let f = group("female", 10, &[("sexuality", 5), ("family", 5)]);
        let m = group("male", 20, &[("family", 20)]);
        let d = gender_theme_delta(&f, &m).unwrap();
        assert_eq!(delta_of(&d, "sexuality"), 0.5);
        assert_eq!(delta_of(&d, "family"), -0.5);

        // hand arithmetic: female 2/8 3/8 3/8, male 6/12 2/12 4/12
        let f = group("female", 8, &[("a", 2), ("b", 3), ("c", 3)]);
        let m = group("male", 12, &[("a", 6), ("b", 2), ("c", 4)]);
        let d = gender_theme_delta(&f, &m).unwrap();
        assert!((delta_of(&d, "a") - (0.25 - 0.5)).abs() < 1e-15);
        assert!((delta_of(&d, "b") - (0.375 - 1.0 / 6.0)).abs() < 1e-15);
        assert!((delta_of(&d, "c") - (0.375 - 1.0 / 3.0)).abs() < 1e-15);

        let same = gender_theme_delta(&f, &group("male", 16, &[("a", 4), ("b", 6), ("c", 6)])).unwrap();
        assert!(same.iter().all(|x| x.delta == 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![AssociationRow {
            dimension: "industry_shame".into(),
            group: "Bollywood-Hollywood".into(),
            theme: "family, honour".into(),
            delta: -0.125,
        }];
        let mut buf = Vec::new();
        write_association_csv(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"dimension,group,theme,delta\n"));
        assert_eq!(read_association_csv(buf.as_slice()).unwrap(), rows);
    }

    fn arb_pair() -> impl Strategy<Value = (GroupCounts, GroupCounts)> {
        let side = || {
            (proptest::collection::vec(0u64..50, 1..8), 0u64..20).prop_filter_map("nonzero", |(v, extra)| {
                let by: BTreeMap<String, u64> = v.iter().enumerate().map(|(i, n)| (format!("t{i}"), *n)).collect();
                let total = by.values().sum::<u64>() + extra;
                (total > 0).then_some((by, total))
            })
        };
        (side(), side()).prop_map(|((a, ta), (b, tb))| {
            (
                GroupCounts { group: "A".into(), total: ta, by_theme: a },
                GroupCounts { group: "B".into(), total: tb, by_theme: b },
            )
        })
    }

    proptest! {
        #[test]
        fn antisymmetric((a, b) in arb_pair()) {
            let ab = theme_association(&a, &b).unwrap();
            let ba = theme_association(&b, &a).unwrap();
            for x in &ab {
                prop_assert_eq!(delta_of(&ba, &x.theme), -x.delta);
            }
        }

        #[test]
        fn scale_invariant((a, b) in arb_pair(), k in 1u64..20) {
            let scaled = GroupCounts {
                group: a.group.clone(),
                total: a.total * k,
                by_theme: a.by_theme.iter().map(|(t, n)| (t.clone(), n * k)).collect(),
            };
            let d1 = theme_association(&a, &b).unwrap();
            let d2 = theme_association(&scaled, &b).unwrap();
            for x in &d1 {
                prop_assert!((delta_of(&d2, &x.theme) - x.delta).abs() < 1e-12);
            }
        }

        #[test]
        fn sum_identity((a, b) in arb_pair()) {
            let d = theme_association(&a, &b).unwrap();
            let sum: f64 = d.iter().map(|x| x.delta).sum();
            let cov = |g: &GroupCounts| g.by_theme.values().sum::<u64>() as f64 / g.total as f64;
            prop_assert!((sum - (cov(&a) - cov(&b))).abs() < 1e-9);
        }
    }
}
