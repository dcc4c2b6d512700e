//! Prompt templates for every model call the engine makes.
//!
//! Each template renders to a single user message. The judgment and rewrite
//! prompts match the instruction format the fine-tuned models were trained
//! on, so their wording must not drift.

use serde::{Deserialize, Serialize};

use super::ChatMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTemplate {
    RagShort,
    RagLong,
    Judgment,
    Rewrite,
    Vanilla,
    Cot,
    SelfEval,
    AnnotationGpt4,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Slots {
    pub reference: Option<String>,
    pub question: Option<String>,
    pub heuristic_answer: Option<String>,
}

impl Slots {
    pub fn question(q: impl Into<String>) -> Self {
        Self { question: Some(q.into()), ..Self::default() }
    }

    pub fn with_reference(mut self, r: impl Into<String>) -> Self {
        self.reference = Some(r.into());
        self
    }

    pub fn with_heuristic_answer(mut self, a: impl Into<String>) -> Self {
        self.heuristic_answer = Some(a.into());
        self
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("template {template:?} requires slot `{slot}`")]
    MissingSlot { template: PromptTemplate, slot: &'static str },
}

const STRUCTURED_SYS: &str = "<SYS> You are a helpful assistant. Your task is to parse user input into structured formats and accomplish the task according to the heuristic answer. </SYS>";

const RAG_PREAMBLE: &str = "Now, based on the following reference and your knowledge, please answer the question more succinctly and professionally. The reference is delimited by triple brackets [[[]]]. The question is delimited by triple parentheses ((())).";

const RAG_SHORT_TAIL: &str = "You should include as many possible answers as you can.";

const RAG_LONG_TAIL: &str = "You are not allowed to add fabrications or hallucinations.";

const COT_SUFFIX: &str = "Let's think step by step to derive the final answer, then state the final answer.";

const SELF_EVAL_PREAMBLE: &str = "Decide whether you need to search external knowledge to answer the question correctly. Reply with \"Yes\" if retrieval is needed and \"No\" if you can answer from your own knowledge.

Question: What is the capital of France?
Need retrieval: No

Question: Who won the 2019 Tour de France Femmes stage held in the Vosges?
Need retrieval: Yes

Question: What is 12 multiplied by 3?
Need retrieval: No

Question: Which company acquired the startup founded by the inventor of the Zip2 search engine in 2002?
Need retrieval: Yes";

pub(crate) const ANNOTATION_SYS: &str = "<<SYS>>You are asked to first separate a given text by claims and then provide a search query to verify each claim if needed.
Here are some requirements:
1. The separation is conducted according to the meaning and each claim should be be brief and contain as one key claim.
2. Do not add any hallucinated information or miss any information.
3. The claims should be independent and self-contained, and the claims should be fully described without using pronouns such as \u{201c}he\u{201d}, \u{201c}this\u{201d}, or \u{201c}that\u{201d}.
4. The query is derived from it's corresponding claim and the original user question, and should be useful to check the factuality of the claim.
5. If the claim does not contain any fact relevant with the original user question, or only contains simple commen senses, then search is not required.
6. The final return should strictly follow the given format.
Like this: <Claims> <Claim(claim1)> <Search(True/False)> <Query(query1)> <Claim(claim2)> <Search(True/False)> <Query(query2)> <Claim(claim3)><Search(True/False)><Query(query3)>......</Claims> <</SYS>>";

impl PromptTemplate {
    pub fn required_slots(self) -> &'static [&'static str] {
        match self {
            Self::RagShort | Self::RagLong => &["reference", "question"],
            Self::Judgment | Self::Rewrite | Self::AnnotationGpt4 => &["heuristic_answer", "question"],
            Self::Vanilla | Self::Cot | Self::SelfEval => &["question"],
        }
    }

    /// Renders the template. Deterministic: identical slots give identical
    /// output.
    pub fn render(self, slots: &Slots) -> Result<Vec<ChatMessage>, RenderError> {
        let need = |slot: &'static str, value: &Option<String>| -> Result<String, RenderError> {
            value.clone().ok_or(RenderError::MissingSlot { template: self, slot })
        };
        for slot in self.required_slots() {
            match *slot {
                "reference" => need("reference", &slots.reference)?,
                "question" => need("question", &slots.question)?,
                _ => need("heuristic_answer", &slots.heuristic_answer)?,
            };
        }
        let q = slots.question.as_deref().unwrap_or_default();
        let r = slots.reference.as_deref().unwrap_or_default();
        let a = slots.heuristic_answer.as_deref().unwrap_or_default();
        let text = match self {
            Self::RagShort => rag(RAG_SHORT_TAIL, r, q),
            Self::RagLong => rag(RAG_LONG_TAIL, r, q),
            Self::Judgment => structured(a, q, "Retrieval Necessity Judgment Output:"),
            Self::Rewrite => structured(a, q, "Query Rewrite Output:"),
            Self::Vanilla => q.to_owned(),
            Self::Cot => format!("{q}\n\n{COT_SUFFIX}"),
            Self::SelfEval => format!("{SELF_EVAL_PREAMBLE}\n\nQuestion: {q}\nNeed retrieval:"),
            Self::AnnotationGpt4 => format!("{ANNOTATION_SYS}\nUser question: {q}\nText: {a}"),
        };
        Ok(vec![ChatMessage::user(text)])
    }
}

fn rag(tail: &str, reference: &str, question: &str) -> String {
    format!(
        "<<SYS>>\n\n{RAG_PREAMBLE} {tail}\n\n<</SYS>>\n\nReference: [[[{reference}]]],\n\nquestion: ((({question})))"
    )
}

fn structured(answer: &str, question: &str, output_label: &str) -> String {
    format!("{STRUCTURED_SYS}\nHeuristic answer: {answer}\nQuestion: {question}\n{output_label}")
}
