//! The three worked examples (knowledge graph, table, database) replayed
//! from committed response scripts, with their prompts pinned in golden files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use structreason::backend::{base_stage_tag, Backend, BackendError, GenerationRequest, Scripted};
use structreason::db::load_database;
use structreason::kg::{KnowledgeGraph, Triple};
use structreason::orchestrator::{
    script_from_traces, Orchestrator, OrchestratorConfig, ReasoningTrace,
};
use structreason::prompt::TemplateRegistry;
use structreason::sql::execute_sql;
use structreason::table::load_table;

pub const DOGS_SQL: &str = "SELECT T1.breed_name FROM Breeds AS T1 JOIN Dogs AS T2 ON T1.breed_code = T2.breed_code GROUP BY T1.breed_name ORDER BY COUNT(*) DESC LIMIT 1";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn golden_dir() -> PathBuf {
    fixtures().join("case_studies")
}

/// Answers by stage name regardless of prompt; used only to author scripts.
struct ByStage(BTreeMap<&'static str, &'static str>);

impl Backend for ByStage {
    fn identity(&self) -> String {
        "by-stage".into()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let tag = base_stage_tag(&request.stage_tag);
        let stage = tag.split('@').next().unwrap_or(tag);
        self.0
            .get(stage)
            .map(|s| s.to_string())
            .ok_or_else(|| BackendError::ScriptMiss {
                stage_tag: request.stage_tag.clone(),
            })
    }
}

pub fn harper_lee_kg() -> KnowledgeGraph {
    KnowledgeGraph::from_triples([
        Triple::parse("Harper Lee", "birthplace", "Monroeville").unwrap(),
        Triple::parse("Harper Lee", "residence", "New York City").unwrap(),
        Triple::parse("Harper Lee", "education", "Monroe County High School").unwrap(),
    ])
}

pub struct Case {
    pub name: &'static str,
    responses: BTreeMap<&'static str, &'static str>,
    config: OrchestratorConfig,
}

pub fn cases() -> Vec<Case> {
    let one_hop = OrchestratorConfig {
        max_hops: 1,
        ..OrchestratorConfig::default()
    };
    vec![
        Case {
            name: "harper_lee",
            responses: BTreeMap::from([
                ("relation-select", "education"),
                (
                    "triple-select",
                    "(Harper Lee, education, Monroe County High School)",
                ),
                ("answer-generate", "Monroe County High School"),
            ]),
            config: one_hop,
        },
        Case {
            name: "district",
            responses: BTreeMap::from([
                ("column-select", "District, Incumbent"),
                ("row-select", "item 8"),
                ("answer-generate", "19th"),
            ]),
            config: OrchestratorConfig::default(),
        },
        Case {
            name: "dogs",
            responses: BTreeMap::from([
                ("table-select", "Dogs, Breeds"),
                ("sql-generate", DOGS_SQL),
            ]),
            config: OrchestratorConfig::default(),
        },
    ]
}

impl Case {
    pub fn run(&self, backend: &dyn Backend, templates: &TemplateRegistry) -> ReasoningTrace {
        let orch = Orchestrator::new(backend, templates, self.config.clone());
        match self.name {
            "harper_lee" => orch.answer_kgqa(
                self.name,
                &harper_lee_kg(),
                "where did Harper Lee study?",
                "Harper Lee",
            ),
            "district" => {
                let table =
                    load_table(fs::File::open(fixtures().join("tables/district.json")).unwrap())
                        .unwrap();
                orch.answer_tableqa(
                    self.name,
                    &table,
                    "which district is Larry Combest the incumbent of?",
                    false,
                )
            }
            _ => {
                let db = load_database(fs::File::open(fixtures().join("dbs/dogs.json")).unwrap())
                    .unwrap();
                orch.generate_sql(
                    self.name,
                    &db,
                    "Which breed do the most dogs have? Give me the breed name.",
                )
            }
        }
    }

    fn script_path(&self) -> PathBuf {
        golden_dir().join(format!("{}.script.json", self.name))
    }

    fn prompts_path(&self) -> PathBuf {
        golden_dir().join(format!("{}.prompts.txt", self.name))
    }

    /// Rewrites the committed script and prompt files from the stage responses.
    pub fn write_goldens(&self, templates: &TemplateRegistry) {
        let trace = self.run(&ByStage(self.responses.clone()), templates);
        fs::create_dir_all(golden_dir()).unwrap();
        fs::write(self.script_path(), script_from_traces([&trace]).to_json()).unwrap();
        fs::write(self.prompts_path(), render_prompts(&trace)).unwrap();
    }

    /// Runs against the committed script and checks prompts and outcome.
    pub fn check(&self, templates: &TemplateRegistry) -> Result<ReasoningTrace, String> {
        let script =
            Scripted::from_file(&self.script_path()).map_err(|e| format!("{}: {e}", self.name))?;
        let trace = self.run(&script, templates);
        let golden =
            fs::read_to_string(self.prompts_path()).map_err(|e| format!("{}: {e}", self.name))?;
        if render_prompts(&trace) != golden {
            return Err(format!(
                "{}: prompts differ from {}",
                self.name,
                self.prompts_path().display()
            ));
        }
        trace
            .validate(templates)
            .map_err(|e| format!("{}: {e}", self.name))?;
        let expected_calls = self.responses.len();
        if trace.llm_calls() != expected_calls {
            return Err(format!(
                "{}: {} calls, expected {expected_calls}",
                self.name,
                trace.llm_calls()
            ));
        }
        match self.name {
            "harper_lee" => expect_answer(&trace, "Monroe County High School"),
            "district" => expect_answer(&trace, "19th"),
            _ => {
                let sql = trace.sql().ok_or("dogs: no SQL")?;
                let db = load_database(fs::File::open(fixtures().join("dbs/dogs.json")).unwrap())
                    .unwrap();
                let result = execute_sql(&db, sql).map_err(|e| format!("dogs: {e}"))?;
                let cells: Vec<&str> = result
                    .rows
                    .iter()
                    .flatten()
                    .map(|c| c.raw.as_str())
                    .collect();
                if cells != ["Bulldog"] {
                    return Err(format!("dogs: executed to {cells:?}"));
                }
                Ok(())
            }
        }?;
        Ok(trace)
    }
}

fn expect_answer(trace: &ReasoningTrace, want: &str) -> Result<(), String> {
    match trace.answers() {
        Some([a]) if a == want => Ok(()),
        other => Err(format!(
            "{}: answers {other:?}, expected {want}",
            trace.example_id
        )),
    }
}

pub fn render_prompts(trace: &ReasoningTrace) -> String {
    let mut out = String::new();
    for s in &trace.steps {
        out.push_str(&format!(
            "=== step {} [{}]\n{}\n",
            s.step_index, s.stage_tag, s.prompt
        ));
    }
    out
}

/// Honors `UPDATE_GOLDEN=1`, then checks every case.
pub fn run_all() -> Result<Vec<ReasoningTrace>, String> {
    let templates = TemplateRegistry::builtin();
    let update = std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1");
    let mut traces = Vec::new();
    for case in cases() {
        if update {
            case.write_goldens(&templates);
        }
        traces.push(case.check(&templates)?);
    }
    Ok(traces)
}
