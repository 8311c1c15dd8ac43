//! Seeded generators producing CSV files with the column layout of the HR
//! attrition, Adult census and BLS employment datasets. Used when the real
//! files are not available locally.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::schema::DatasetSchema;

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn pick_weighted<'a, R: Rng>(rng: &mut R, items: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for (item, w) in items {
        if u < *w {
            return item;
        }
        u -= w;
    }
    items[items.len() - 1].0
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn write_csv(header: &[String], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn clamp_round(v: f64, lo: f64, hi: f64) -> i64 {
    v.round().clamp(lo, hi) as i64
}

/// HR attrition table, 1470 rows. Attrition (about 16% "Yes") depends on
/// monthly income, tenure, age, work-life balance and job satisfaction.
pub fn hr_csv(seed: u64) -> Vec<u8> {
    hr_csv_rows(seed, 1470)
}

pub fn hr_csv_rows(seed: u64, n: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid parameters");
    let income = LogNormal::new(8.6, 0.45).expect("valid parameters");
    let header: Vec<String> = DatasetSchema::hr().labels().map(String::from).collect();
    let departments = ["Sales", "Research & Development", "Human Resources"];
    let fields = [
        "Life Sciences",
        "Medical",
        "Marketing",
        "Technical Degree",
        "Human Resources",
        "Other",
    ];
    let roles = [
        "Sales Executive",
        "Research Scientist",
        "Laboratory Technician",
        "Manufacturing Director",
        "Healthcare Representative",
        "Manager",
        "Sales Representative",
        "Research Director",
        "Human Resources",
    ];

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let age = clamp_round(36.9 + 9.1 * std_normal.sample(&mut rng), 18.0, 60.0);
        let monthly_income = clamp_round(income.sample(&mut rng), 1009.0, 19999.0);
        let years_at_company = clamp_round(LogNormal::new(1.6, 0.8).unwrap().sample(&mut rng) - 1.0, 0.0, 40.0);
        let wlb = pick_weighted(&mut rng, &[("1", 0.055), ("2", 0.235), ("3", 0.605), ("4", 0.105)]);
        let job_sat = pick_weighted(&mut rng, &[("1", 0.2), ("2", 0.19), ("3", 0.3), ("4", 0.31)]);

        let z_income = (monthly_income as f64).ln() - 8.6;
        let z_income = z_income / 0.45;
        let z_years = ((years_at_company as f64 + 1.0).ln() - 1.6) / 0.8;
        let z_age = (age as f64 - 36.9) / 9.1;
        let wlb_low = 2.5 - wlb.parse::<f64>().unwrap();
        let sat_low = 2.5 - job_sat.parse::<f64>().unwrap();
        let logit = -2.6 - 1.5 * z_income - 1.2 * z_years - 1.0 * z_age + 0.9 * wlb_low + 0.75 * sat_low;
        let attrition = if rng.gen::<f64>() < sigmoid(logit) { "Yes" } else { "No" };

        let total_years = clamp_round((age as f64 - 18.0) * rng.gen_range(0.2..0.9), 0.0, 40.0);
        let row = vec![
            age.to_string(),
            attrition.to_string(),
            pick_weighted(
                &mut rng,
                &[("Travel_Rarely", 0.71), ("Travel_Frequently", 0.19), ("Non-Travel", 0.1)],
            )
            .to_string(),
            rng.gen_range(102..=1499).to_string(),
            pick_weighted(&mut rng, &[(departments[0], 0.3), (departments[1], 0.65), (departments[2], 0.05)]).to_string(),
            rng.gen_range(1..=29).to_string(),
            rng.gen_range(1..=5).to_string(),
            pick(&mut rng, &fields).to_string(),
            "1".to_string(),
            (i + 1).to_string(),
            rng.gen_range(1..=4).to_string(),
            pick_weighted(&mut rng, &[("Male", 0.6), ("Female", 0.4)]).to_string(),
            rng.gen_range(30..=100).to_string(),
            rng.gen_range(1..=4).to_string(),
            rng.gen_range(1..=5).to_string(),
            pick(&mut rng, &roles).to_string(),
            job_sat.to_string(),
            pick_weighted(&mut rng, &[("Married", 0.46), ("Single", 0.32), ("Divorced", 0.22)]).to_string(),
            monthly_income.to_string(),
            rng.gen_range(2094..=26999).to_string(),
            rng.gen_range(0..=9).to_string(),
            "Y".to_string(),
            pick_weighted(&mut rng, &[("No", 0.72), ("Yes", 0.28)]).to_string(),
            rng.gen_range(11..=25).to_string(),
            pick_weighted(&mut rng, &[("3", 0.85), ("4", 0.15)]).to_string(),
            rng.gen_range(1..=4).to_string(),
            "80".to_string(),
            rng.gen_range(0..=3).to_string(),
            total_years.to_string(),
            rng.gen_range(0..=6).to_string(),
            wlb.to_string(),
            years_at_company.to_string(),
            rng.gen_range(0..=18).to_string(),
            rng.gen_range(0..=15).to_string(),
            rng.gen_range(0..=17).to_string(),
        ];
        debug_assert_eq!(row.len(), header.len());
        rows.push(row);
    }
    write_csv(&header, rows)
}

const EDUCATION: &[(&str, u32)] = &[
    ("Preschool", 1),
    ("1st-4th", 2),
    ("5th-6th", 3),
    ("7th-8th", 4),
    ("9th", 5),
    ("10th", 6),
    ("11th", 7),
    ("12th", 8),
    ("HS-grad", 9),
    ("Some-college", 10),
    ("Assoc-voc", 11),
    ("Assoc-acdm", 12),
    ("Bachelors", 13),
    ("Masters", 14),
    ("Prof-school", 15),
    ("Doctorate", 16),
];

/// Adult census table with `rows` rows. About 7% of `workclass`/`occupation`
/// and 2% of `native-country` values are "?".
pub fn adult_csv(seed: u64, rows: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid parameters");
    let header: Vec<String> = DatasetSchema::adult().labels().map(String::from).collect();
    let workclass = [
        "Private",
        "Self-emp-not-inc",
        "Self-emp-inc",
        "Federal-gov",
        "Local-gov",
        "State-gov",
        "Without-pay",
        "Never-worked",
    ];
    let marital = [
        "Married-civ-spouse",
        "Divorced",
        "Never-married",
        "Separated",
        "Widowed",
        "Married-spouse-absent",
        "Married-AF-spouse",
    ];
    let occupation = [
        "Tech-support",
        "Craft-repair",
        "Other-service",
        "Sales",
        "Exec-managerial",
        "Prof-specialty",
        "Handlers-cleaners",
        "Machine-op-inspct",
        "Adm-clerical",
        "Farming-fishing",
        "Transport-moving",
        "Priv-house-serv",
        "Protective-serv",
        "Armed-Forces",
    ];
    let relationship = ["Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"];
    let race = ["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"];
    let country = [
        "United-States",
        "Mexico",
        "Philippines",
        "Germany",
        "Canada",
        "India",
        "England",
        "China",
        "Cuba",
        "Jamaica",
        "South",
        "Italy",
        "Poland",
        "Vietnam",
        "Japan",
    ];

    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let age = clamp_round(38.6 + 13.6 * std_normal.sample(&mut rng), 17.0, 90.0);
        let (edu, edu_num) = EDUCATION[rng.gen_range(0..EDUCATION.len())];
        let married = rng.gen_bool(0.46);
        let marital_status = if married { marital[0] } else { pick(&mut rng, &marital[1..]) };
        let hours = clamp_round(40.4 + 12.3 * std_normal.sample(&mut rng), 1.0, 99.0);
        let gain = if rng.gen_bool(0.08) { rng.gen_range(100..=99999) } else { 0 };
        let loss = if rng.gen_bool(0.05) { rng.gen_range(100..=4356) } else { 0 };
        let logit = -4.2
            + 0.32 * (edu_num as f64 - 10.0)
            + 0.04 * (age as f64 - 38.0)
            + 0.03 * (hours as f64 - 40.0)
            + if married { 2.0 } else { 0.0 }
            + if gain > 5000 { 2.5 } else { 0.0 };
        let income = if rng.gen::<f64>() < sigmoid(logit + 1.0) { ">50K" } else { "<=50K" };
        let missing_or = |rng: &mut ChaCha8Rng, p: f64, v: &str| {
            if rng.gen_bool(p) {
                "?".to_string()
            } else {
                v.to_string()
            }
        };
        let wc = pick(&mut rng, &workclass);
        let occ = pick(&mut rng, &occupation);
        let ctry = if rng.gen_bool(0.9) { country[0] } else { pick(&mut rng, &country[1..]) };
        let row = vec![
            age.to_string(),
            missing_or(&mut rng, 0.07, wc),
            rng.gen_range(12285..=1490400).to_string(),
            edu.to_string(),
            edu_num.to_string(),
            marital_status.to_string(),
            missing_or(&mut rng, 0.07, occ),
            pick(&mut rng, &relationship).to_string(),
            pick(&mut rng, &race).to_string(),
            pick_weighted(&mut rng, &[("Male", 0.67), ("Female", 0.33)]).to_string(),
            gain.to_string(),
            loss.to_string(),
            hours.to_string(),
            missing_or(&mut rng, 0.02, ctry),
            income.to_string(),
        ];
        out.push(row);
    }
    write_csv(&header, out)
}

/// Number of series in the generated BLS table; 12 series × 60 months = 720 entries.
pub const BLS_SERIES: usize = 12;
pub const BLS_MONTHS: usize = 60;

/// Monthly employment levels for 12 series from 2015-01 to 2019-12.
pub fn bls_raw_csv(seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid parameters");
    let header: Vec<String> = DatasetSchema::bls_raw().labels().map(String::from).collect();
    let mut rows = Vec::with_capacity(BLS_SERIES * BLS_MONTHS);
    for s in 0..BLS_SERIES {
        let id = format!("CES{:02}00000001", 10 + s * 5);
        let mut level: f64 = rng.gen_range(500.0..20000.0);
        let drift = rng.gen_range(-0.001..0.004);
        let amplitude = rng.gen_range(0.002..0.01);
        for m in 0..BLS_MONTHS {
            let season = amplitude * (2.0 * std::f64::consts::PI * m as f64 / 12.0).sin();
            level *= 1.0 + drift + season + 0.003 * noise.sample(&mut rng);
            let period = format!("{}-{:02}", 2015 + m / 12, m % 12 + 1);
            rows.push(vec![id.clone(), period, format!("{level:.1}")]);
        }
    }
    write_csv(&header, rows)
}
