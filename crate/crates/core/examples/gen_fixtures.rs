//! Regenerates the synthetic fixtures under `fixtures/`.
//!
//! ```text
//! cargo run -p emrkg-core --example gen_fixtures -- fixtures
//! ```
//!
//! Output is a pure function of the constants below, so rerunning it leaves
//! the committed files unchanged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use emrkg_core::corpus::{to_bio, write_bio, Segment, TypedSpan};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DISEASES: &[&str] = &[
    "肝癌",
    "原发肝细胞癌",
    "肝硬化",
    "乙型病毒性肝炎",
    "胆囊炎",
    "胆囊结石",
    "脂肪肝",
    "高血压",
    "糖尿病",
    "门静脉高压",
    "肝囊肿",
    "胃溃疡",
    "急性胰腺炎",
    "肝血管瘤",
    "肝内胆管结石",
    "慢性胃炎",
    "冠心病",
    "肝性脑病",
    "食管静脉曲张",
    "丙型病毒性肝炎",
];
const SYMPTOMS: &[&str] = &[
    "腹痛",
    "呕吐",
    "腹泻",
    "发热",
    "乏力",
    "黄疸",
    "恶心",
    "纳差",
    "消瘦",
    "腹胀",
    "咳嗽",
    "胸闷",
    "皮肤瘙痒",
    "头晕",
    "呕血",
    "黑便",
    "隐痛不适",
    "反酸",
    "心悸",
    "食欲减退",
];
const BODY_CHECKS: &[&str] = &[
    "左上腹",
    "右上腹",
    "肝区",
    "剑突下",
    "腹部",
    "双下肢",
    "巩膜",
    "右侧肩背部",
    "脐周",
    "右下腹",
    "腰背部",
    "上腹部",
    "左下腹",
    "肝肋下",
    "脾肋下",
];
const CONDITIONS: &[&str] = &[
    "神志清楚",
    "精神尚可",
    "睡眠欠佳",
    "食欲下降",
    "体重减轻",
    "大便正常",
    "小便正常",
    "精神差",
    "饮食正常",
    "体力下降",
    "睡眠正常",
    "二便如常",
];
const CHECKS: &[&str] = &[
    "腹部CT",
    "血常规",
    "肝功能",
    "腹部B超",
    "甲胎蛋白",
    "上腹部磁共振",
    "胃镜",
    "凝血功能",
    "肾功能",
    "心电图",
    "胸部X线",
    "肿瘤标志物",
    "乙肝五项",
    "腹部增强CT",
];
const TREATMENTS: &[&str] = &[
    "保肝治疗",
    "抗病毒治疗",
    "化疗",
    "介入治疗",
    "输血治疗",
    "止痛治疗",
    "抗感染治疗",
    "护胃治疗",
    "补液治疗",
    "营养支持治疗",
    "降压治疗",
    "利尿治疗",
];
const OPERATIONS: &[&str] = &[
    "肝切除术",
    "胆囊切除术",
    "肝移植术",
    "射频消融术",
    "肝动脉化疗栓塞术",
    "胆总管探查术",
    "脾切除术",
    "腹腔镜胆囊切除术",
    "肝部分切除术",
    "经皮肝穿刺引流术",
];

/// Context templates. `{Type}` marks an entity slot, `{n}` a small number.
const TEMPLATES: &[&str] = &[
    "患者因{Symptom}伴{Symptom}{n}天入院。",
    "{BodyCheck}压痛，伴{Symptom}。",
    "行{Check}提示{Disease}。",
    "既往有{Disease}病史{n}年。",
    "予{Treatment}后{Symptom}好转。",
    "于{n}月前行{Operation}，术后恢复可。",
    "入院时{Condition}，{Condition}。",
    "查体：{BodyCheck}无压痛，{BodyCheck}无水肿。",
    "复查{Check}及{Check}未见明显异常。",
    "诊断为{Disease}，建议{Treatment}。",
    "患者{Condition}，无{Symptom}。",
    "拟行{Operation}治疗{Disease}。",
    "近{n}周出现{Symptom}，{Condition}。",
    "{Disease}合并{Disease}，予{Treatment}。",
];

const FILLERS: &[&str] = &["患者自述", "近期", "明显", "偶有", "家属诉", "反复"];
const NOISE_CHARS: &[char] = &['的', '了', '及', '后', '且', '再', '约', '已'];

fn pool(label: &str) -> &'static [&'static str] {
    match label {
        "Disease" => DISEASES,
        "Symptom" => SYMPTOMS,
        "BodyCheck" => BODY_CHECKS,
        "Condition" => CONDITIONS,
        "Check" => CHECKS,
        "Treatment" => TREATMENTS,
        "Operation" => OPERATIONS,
        _ => panic!("unknown slot {label}"),
    }
}

/// Which part of each surface list a sentence may draw from.
#[derive(Clone, Copy)]
enum Surfaces {
    All,
    /// First 70% of each list.
    Seen,
    /// Remaining 30%.
    HeldOut,
}

fn pick<'a>(rng: &mut ChaCha8Rng, list: &'a [&'a str], which: Surfaces) -> &'a str {
    let cut = (list.len() * 7).div_ceil(10);
    let slice = match which {
        Surfaces::All => list,
        Surfaces::Seen => &list[..cut],
        Surfaces::HeldOut => &list[cut..],
    };
    slice.choose(rng).unwrap()
}

struct Generated {
    text: String,
    spans: Vec<TypedSpan>,
}

fn fill(template: &str, rng: &mut ChaCha8Rng, which: Surfaces, noisy: bool) -> Generated {
    let mut text = String::new();
    let mut len = 0usize;
    let mut spans = Vec::new();
    let push = |text: &mut String, s: &str, len: &mut usize| {
        text.push_str(s);
        *len += s.chars().count();
    };
    if noisy && rng.gen_bool(0.3) {
        push(&mut text, FILLERS.choose(rng).unwrap(), &mut len);
    }
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}').unwrap() + open;
        push(&mut text, &rest[..open], &mut len);
        let slot = &rest[open + 1..close];
        if slot == "n" {
            let n = rng.gen_range(1..=12).to_string();
            push(&mut text, &n, &mut len);
        } else {
            let surface = pick(rng, pool(slot), which);
            let start = len;
            push(&mut text, surface, &mut len);
            spans.push(TypedSpan::new(slot, start, len));
        }
        rest = &rest[close + 1..];
    }
    push(&mut text, rest, &mut len);

    if noisy {
        // Swap a few context characters for function characters.
        let mut chars: Vec<char> = text.chars().collect();
        for (i, c) in chars.iter_mut().enumerate() {
            let in_entity = spans.iter().any(|s| s.start <= i && i < s.end);
            if !in_entity && *c != '。' && rng.gen_bool(0.06) {
                *c = *NOISE_CHARS.choose(rng).unwrap();
            }
        }
        text = chars.into_iter().collect();
    }
    Generated { text, spans }
}

fn sentences(n: usize, seed: u64, which: Surfaces, noisy: bool) -> Vec<Generated> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = TEMPLATES.choose(&mut rng).unwrap();
            fill(t, &mut rng, which, noisy)
        })
        .collect()
}

fn bio(generated: &[Generated]) -> String {
    let segments: Vec<Segment> = generated
        .iter()
        .map(|g| Segment { chars: g.text.chars().collect(), spans: g.spans.clone(), offset: 0 })
        .collect();
    write_bio(&to_bio(&segments).unwrap())
}

fn write(path: &Path, content: &str) {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    fs::write(path, content).unwrap();
}

fn dictionary_tsv() -> String {
    let mut out = String::new();
    for label in ["Disease", "BodyCheck", "Symptom", "Condition", "Check", "Treatment", "Operation"] {
        for s in pool(label) {
            let _ = writeln!(out, "{label}\t{s}");
        }
    }
    out
}

struct Patient {
    id: &'static str,
    nation: &'static str,
    age: u32,
    sex: &'static str,
    admitted: &'static str,
    diseases: &'static [&'static str],
}

const PATIENTS: &[Patient] = &[
    Patient {
        id: "P0001",
        nation: "汉族",
        age: 56,
        sex: "男",
        admitted: "2016-03-14",
        diseases: &["原发肝细胞癌", "肝硬化"],
    },
    Patient {
        id: "P0002",
        nation: "汉族",
        age: 63,
        sex: "男",
        admitted: "2016-07-02",
        diseases: &["肝癌", "乙型病毒性肝炎"],
    },
    Patient {
        id: "P0003",
        nation: "壮族",
        age: 48,
        sex: "女",
        admitted: "2017-01-19",
        diseases: &["胆囊结石", "慢性胃炎"],
    },
    Patient {
        id: "P0004",
        nation: "汉族",
        age: 71,
        sex: "男",
        admitted: "2017-05-23",
        diseases: &["原发肝细胞癌", "高血压"],
    },
    Patient { id: "P0005", nation: "瑶族", age: 39, sex: "女", admitted: "2018-02-08", diseases: &["肝血管瘤"] },
    Patient {
        id: "P0006",
        nation: "汉族",
        age: 58,
        sex: "男",
        admitted: "2018-09-30",
        diseases: &["肝癌", "门静脉高压"],
    },
    Patient {
        id: "P0007",
        nation: "汉族",
        age: 66,
        sex: "女",
        admitted: "2019-04-11",
        diseases: &["肝内胆管结石", "胆囊炎"],
    },
    Patient {
        id: "P0008",
        nation: "回族",
        age: 52,
        sex: "男",
        admitted: "2019-11-05",
        diseases: &["乙型肝炎肝硬化", "糖尿病"],
    },
    Patient {
        id: "P0009",
        nation: "汉族",
        age: 45,
        sex: "男",
        admitted: "2020-01-17",
        diseases: &["脂肪肝", "急性胰腺炎"],
    },
    Patient {
        id: "P0010",
        nation: "汉族",
        age: 60,
        sex: "女",
        admitted: "2020-08-26",
        diseases: &["肝细胞癌", "冠心病"],
    },
];

/// One patient record: disease sentences built from the patient's own
/// diagnoses, plus template sentences.
fn patient_record(p: &Patient, rng: &mut ChaCha8Rng) -> (String, Vec<TypedSpan>) {
    let mut text = String::new();
    let mut spans = Vec::new();
    let mut len = 0usize;
    let emit = |g: Generated, text: &mut String, spans: &mut Vec<TypedSpan>, len: &mut usize| {
        for s in g.spans {
            spans.push(TypedSpan::new(s.label, s.start + *len, s.end + *len));
        }
        *len += g.text.chars().count();
        text.push_str(&g.text);
    };
    for (i, d) in p.diseases.iter().enumerate() {
        let prefix = if i == 0 { "入院诊断：" } else { "既往诊断：" };
        let start = prefix.chars().count();
        let sentence = format!("{prefix}{d}。");
        let g = Generated { spans: vec![TypedSpan::new("Disease", start, start + d.chars().count())], text: sentence };
        emit(g, &mut text, &mut spans, &mut len);
    }
    for _ in 0..6 {
        let t = TEMPLATES.choose(rng).unwrap();
        let mut g = fill(t, rng, Surfaces::All, false);
        // Keep EMR disease mentions tied to the patient's own diagnoses.
        let mut shifted = String::new();
        let chars: Vec<char> = g.text.chars().collect();
        let mut cursor = 0;
        let mut new_spans = Vec::new();
        let mut own = p.diseases.to_vec();
        own.shuffle(rng);
        let mut next_disease = own.iter().cycle();
        for s in &g.spans {
            shifted.extend(&chars[cursor..s.start]);
            let start = shifted.chars().count();
            let surface = if s.label == "Disease" {
                next_disease.next().unwrap().to_string()
            } else {
                chars[s.start..s.end].iter().collect()
            };
            shifted.push_str(&surface);
            new_spans.push(TypedSpan::new(s.label.clone(), start, start + surface.chars().count()));
            cursor = s.end;
        }
        shifted.extend(&chars[cursor..]);
        g.text = shifted;
        g.spans = new_spans;
        if i_newline(rng) {
            g.text.push('\n');
        }
        emit(g, &mut text, &mut spans, &mut len);
    }
    (text, spans)
}

fn i_newline(rng: &mut ChaCha8Rng) -> bool {
    rng.gen_bool(0.3)
}

fn ann(text: &str, spans: &[TypedSpan]) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::new();
    for (i, s) in spans.iter().enumerate() {
        let surface: String = chars[s.start..s.end].iter().collect();
        let label = if s.label == "Disease" { "disease".to_string() } else { s.label.clone() };
        let _ = writeln!(out, "T{}\t{} {} {}\t{}", i + 1, label, s.start, s.end, surface);
    }
    out
}

struct KbDisease {
    name: &'static str,
    relations: &'static [(&'static str, &'static [&'static str])],
}

const KB: &[KbDisease] = &[
    KbDisease {
        name: "肝癌",
        relations: &[
            ("RecommendedFood", &["鸡蛋", "鲫鱼", "西兰花"]),
            ("AvoidFood", &["白酒", "腌制食品"]),
            ("CommonDrug", &["索拉非尼片", "仑伐替尼胶囊"]),
            ("DiagnosticCheck", &["甲胎蛋白", "腹部CT"]),
            ("HasSymptom", &["肝区疼痛", "消瘦", "黄疸"]),
            ("Complication", &["肝性脑病", "上消化道出血", "肝肾综合征"]),
            ("BelongsToDepartment", &["肿瘤科"]),
            ("RelatedDepartment", &["肝胆外科"]),
        ],
    },
    KbDisease {
        name: "原发性肝细胞癌",
        relations: &[
            ("RecommendedFood", &["鸡蛋", "豆腐"]),
            ("AvoidFood", &["白酒"]),
            ("CommonDrug", &["索拉非尼片"]),
            ("DiagnosticCheck", &["甲胎蛋白", "上腹部磁共振"]),
            ("HasSymptom", &["肝区疼痛", "乏力"]),
            ("Complication", &["肝性脑病", "门静脉高压"]),
            ("BelongsToDepartment", &["肿瘤科"]),
            ("RelatedDepartment", &["肝胆外科"]),
        ],
    },
    KbDisease {
        name: "肝硬化",
        relations: &[
            ("RecommendedFood", &["豆腐", "鲫鱼"]),
            ("AvoidFood", &["白酒", "油炸食品"]),
            ("CommonDrug", &["恩替卡韦片", "呋塞米片"]),
            ("DiagnosticCheck", &["肝功能", "腹部B超"]),
            ("HasSymptom", &["腹胀", "乏力", "黄疸"]),
            ("Complication", &["门静脉高压", "肝性脑病", "食管静脉曲张"]),
            ("BelongsToDepartment", &["消化内科"]),
            ("RelatedDepartment", &["感染科"]),
        ],
    },
    KbDisease {
        name: "乙型病毒性肝炎",
        relations: &[
            ("RecommendedFood", &["鸡蛋"]),
            ("AvoidFood", &["白酒"]),
            ("CommonDrug", &["恩替卡韦片"]),
            ("DiagnosticCheck", &["乙肝五项", "肝功能"]),
            ("HasSymptom", &["乏力", "纳差"]),
            ("Complication", &["肝硬化", "肝癌"]),
            ("BelongsToDepartment", &["感染科"]),
        ],
    },
    KbDisease {
        name: "胆囊结石",
        relations: &[
            ("RecommendedFood", &["西兰花"]),
            ("AvoidFood", &["油炸食品"]),
            ("CommonDrug", &["熊去氧胆酸胶囊"]),
            ("DiagnosticCheck", &["腹部B超"]),
            ("HasSymptom", &["右上腹痛"]),
            ("Complication", &["胆囊炎", "急性胰腺炎"]),
            ("BelongsToDepartment", &["肝胆外科"]),
        ],
    },
    KbDisease {
        name: "胆囊炎",
        relations: &[
            ("AvoidFood", &["油炸食品"]),
            ("HasSymptom", &["右上腹痛", "发热"]),
            ("Complication", &["胆囊穿孔"]),
            ("BelongsToDepartment", &["肝胆外科"]),
        ],
    },
    KbDisease {
        name: "门静脉高压",
        relations: &[
            ("DiagnosticCheck", &["腹部B超"]),
            ("HasSymptom", &["腹胀", "呕血"]),
            ("Complication", &["食管静脉曲张", "上消化道出血"]),
            ("BelongsToDepartment", &["肝胆外科"]),
        ],
    },
    KbDisease {
        name: "肝性脑病", relations: &[("HasSymptom", &["意识障碍"]), ("BelongsToDepartment", &["消化内科"])]
    },
    KbDisease {
        name: "高血压",
        relations: &[
            ("RecommendedFood", &["芹菜"]),
            ("AvoidFood", &["腌制食品"]),
            ("CommonDrug", &["硝苯地平片"]),
            ("DiagnosticCheck", &["心电图"]),
            ("HasSymptom", &["头晕"]),
            ("Complication", &["冠心病"]),
            ("BelongsToDepartment", &["心内科"]),
        ],
    },
    KbDisease {
        name: "糖尿病",
        relations: &[
            ("RecommendedFood", &["芹菜"]),
            ("CommonDrug", &["二甲双胍片"]),
            ("DiagnosticCheck", &["血糖"]),
            ("HasSymptom", &["消瘦"]),
            ("Complication", &["冠心病"]),
            ("BelongsToDepartment", &["内分泌科"]),
        ],
    },
    KbDisease {
        name: "急性胰腺炎",
        relations: &[
            ("AvoidFood", &["白酒", "油炸食品"]),
            ("DiagnosticCheck", &["血淀粉酶", "腹部CT"]),
            ("HasSymptom", &["腹痛", "呕吐"]),
            ("BelongsToDepartment", &["消化内科"]),
        ],
    },
    KbDisease {
        name: "肝血管瘤",
        relations: &[("DiagnosticCheck", &["腹部B超"]), ("BelongsToDepartment", &["肝胆外科"])],
    },
    KbDisease {
        name: "冠心病",
        relations: &[
            ("CommonDrug", &["阿司匹林肠溶片"]),
            ("DiagnosticCheck", &["心电图"]),
            ("HasSymptom", &["胸闷", "心悸"]),
            ("BelongsToDepartment", &["心内科"]),
        ],
    },
    KbDisease {
        name: "慢性胃炎",
        relations: &[
            ("CommonDrug", &["奥美拉唑肠溶胶囊"]),
            ("DiagnosticCheck", &["胃镜"]),
            ("HasSymptom", &["反酸", "腹胀"]),
            ("BelongsToDepartment", &["消化内科"]),
        ],
    },
    KbDisease {
        name: "脂肪肝",
        relations: &[
            ("RecommendedFood", &["西兰花"]),
            ("AvoidFood", &["油炸食品"]),
            ("DiagnosticCheck", &["腹部B超"]),
            ("Complication", &["肝硬化"]),
            ("BelongsToDepartment", &["消化内科"]),
        ],
    },
];

fn kb_jsonl() -> String {
    let mut out = String::from("{\"format\":\"emrkg-kb\",\"schema_version\":1}\n");
    for (i, d) in KB.iter().enumerate() {
        let relations: BTreeMap<&str, &[&str]> = d.relations.iter().copied().collect();
        let record = serde_json_lite(d.name, i, &relations);
        out.push_str(&record);
        out.push('\n');
    }
    out
}

/// Hand-rolled JSON so the example needs no extra dependency.
fn serde_json_lite(name: &str, i: usize, relations: &BTreeMap<&str, &[&str]>) -> String {
    let quote = |s: &str| format!("\"{}\"", s.replace('"', "\\\""));
    let rels: Vec<String> = relations
        .iter()
        .map(|(k, v)| format!("{}:[{}]", quote(k), v.iter().map(|x| quote(x)).collect::<Vec<_>>().join(",")))
        .collect();
    format!(
        "{{\"name\":{},\"description\":{},\"prevention\":{},\"cure_time\":{},\"treatments\":[{}],\"cause\":{},\"relations\":{{{}}}}}",
        quote(name),
        quote(&format!("{name}是常见的消化系统相关疾病之一。")),
        quote("规律作息，定期体检。"),
        quote(["1-3个月", "3-6个月", "长期治疗"][i % 3]),
        [quote("药物治疗"), quote(["手术治疗", "支持治疗", "介入治疗"][i % 3])].join(","),
        quote(["病毒感染", "长期饮酒", "遗传及环境因素"][i % 3]),
        rels.join(",")
    )
}

fn main() {
    let root = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let root = Path::new(&root);

    // 50 clean sentences for the memorization check.
    write(&root.join("memorize.bio"), &bio(&sentences(50, 1, Surfaces::All, false)));

    // Noisy corpus: training sentences only use the first 70% of every
    // surface list, validation sentences only the held-out rest.
    write(&root.join("noisy/train.bio"), &bio(&sentences(240, 2, Surfaces::Seen, true)));
    write(&root.join("noisy/valid.bio"), &bio(&sentences(60, 3, Surfaces::HeldOut, true)));
    write(&root.join("noisy/dict.tsv"), &dictionary_tsv());
    write(&root.join("dict.tsv"), &dictionary_tsv());

    // Patient records in brat format.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for p in PATIENTS {
        let (text, spans) = patient_record(p, &mut rng);
        let dir = root.join("emr");
        write(&dir.join(format!("{}.txt", p.id)), &text);
        write(&dir.join(format!("{}.ann", p.id)), &ann(&text, &spans));
        write(
            &dir.join(format!("{}.meta", p.id)),
            &format!("nation\t{}\nage\t{}\nsex\t{}\nadmission_time\t{}\n", p.nation, p.age, p.sex, p.admitted),
        );
    }

    write(&root.join("kb_small.jsonl"), &kb_jsonl());
}
