use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Builder, Piece};
use crate::ir::{NodeId, Role};

fn text(b: &Builder<'_>, label: &str, len: usize) -> Piece {
    Piece::Text(b.text(label, len))
}

fn system(b: &mut Builder<'_>, label: &str) -> (Role, Vec<Piece>) {
    let len = b.jittered(b.spec.shape.system);
    (Role::System, vec![Piece::Text(b.text(label, len))])
}

/// Optional shared context followed by the question.
fn task_inputs(b: &mut Builder<'_>) -> (Option<NodeId>, NodeId) {
    let shape = b.spec.shape;
    let ctx = (shape.context > 0).then(|| b.input("context", shape.context, b.spec.shared_context, false));
    let q = b.input("question", shape.question, false, false);
    (ctx, q)
}

fn task_pieces(b: &Builder<'_>, ctx: Option<NodeId>, q: NodeId) -> Vec<Piece> {
    let mut out = Vec::new();
    if let Some(c) = ctx {
        out.push(text(b, "context-header", 3));
        out.push(Piece::Ref(c));
    }
    out.push(text(b, "question-header", 2));
    out.push(Piece::Ref(q));
    out
}

fn out_len(b: &mut Builder<'_>) -> usize {
    let o = b.spec.shape.output;
    b.jittered(o)
}

/// Experts answer independently; a summarizer aggregates their answers.
/// Each expert formats the context on its own, which common subgraph
/// elimination folds into one node.
pub(super) fn mapred(b: &mut Builder<'_>) {
    let (ctx, q) = task_inputs(b);
    let mut answers = Vec::new();
    for i in 0..b.spec.agents {
        let label = if b.spec.same_role { "expert".into() } else { format!("expert-{i}") };
        let sys = system(b, &label);
        let mut user = Vec::new();
        if let Some(c) = ctx {
            let header = b.text("context-header", 3);
            let formatted = b.format(vec![Piece::Text(header), Piece::Ref(c)]);
            user.push(Piece::Ref(formatted));
        }
        user.push(text(b, "question-header", 2));
        user.push(Piece::Ref(q));
        let len = out_len(b);
        answers.push(b.llm(vec![sys, (Role::User, user)], len));
    }
    let sys = system(b, "summarizer");
    let mut user = vec![text(b, "question-header", 2), Piece::Ref(q), text(b, "answers-header", 2)];
    user.extend(answers.iter().map(|a| Piece::Ref(*a)));
    let len = out_len(b);
    let summary = b.llm(vec![sys, (Role::User, user)], len);
    b.output(summary);
}

/// Agents answer, then for each further round read their own previous
/// answer and everyone else's.
pub(super) fn debate(b: &mut Builder<'_>) {
    let (ctx, q) = task_inputs(b);
    let n = b.spec.agents;
    let labels: Vec<_> = (0..n).map(|i| format!("debater-{i}")).collect();
    let sys_lens: Vec<usize> = (0..n).map(|_| b.jittered(b.spec.shape.system)).collect();
    let mut prev: Vec<NodeId> = Vec::new();
    for round in 0..b.spec.rounds {
        let mut cur = Vec::new();
        for i in 0..n {
            let mut msgs = vec![
                (Role::System, vec![Piece::Text(b.text(&labels[i], sys_lens[i]))]),
                (Role::User, task_pieces(b, ctx, q)),
            ];
            if round > 0 {
                msgs.push((Role::Assistant, vec![Piece::Ref(prev[i])]));
                let mut others = vec![text(b, "others-header", 3)];
                others.extend((0..n).filter(|j| *j != i).map(|j| Piece::Ref(prev[j])));
                msgs.push((Role::User, others));
            }
            let len = out_len(b);
            cur.push(b.llm(msgs, len));
        }
        prev = cur;
    }
    for p in prev {
        b.output(p);
    }
}

/// An expert drafts, critics comment on the draft, the expert refines.
pub(super) fn reflect(b: &mut Builder<'_>) {
    let (ctx, q) = task_inputs(b);
    let expert_len = b.jittered(b.spec.shape.system);
    let expert_sys = b.text("reflect-expert", expert_len);
    let len = out_len(b);
    let draft = b.llm(
        vec![(Role::System, vec![Piece::Text(expert_sys.clone())]), (Role::User, task_pieces(b, ctx, q))],
        len,
    );
    let mut critiques = Vec::new();
    for i in 0..b.spec.agents {
        let sys = system(b, &format!("critic-{i}"));
        let review = vec![text(b, "draft-header", 2), Piece::Ref(draft)];
        let len = out_len(b);
        critiques.push(b.llm(vec![sys, (Role::User, task_pieces(b, ctx, q)), (Role::User, review)], len));
    }
    let mut feedback = vec![text(b, "feedback-header", 2)];
    feedback.extend(critiques.iter().map(|c| Piece::Ref(*c)));
    let len = out_len(b);
    let refined = b.llm(
        vec![
            (Role::System, vec![Piece::Text(expert_sys)]),
            (Role::User, task_pieces(b, ctx, q)),
            (Role::Assistant, vec![Piece::Ref(draft)]),
            (Role::User, feedback),
        ],
        len,
    );
    b.output(refined);
}

/// A summarizer walks over the chunks, refining its previous summary.
pub(super) fn iterative(b: &mut Builder<'_>) {
    let chunk_len = b.spec.shape.context;
    let chunks: Vec<NodeId> = (0..b.spec.agents).map(|i| b.input(&format!("chunk-{i}"), chunk_len, false, false)).collect();
    let sys_len = b.jittered(b.spec.shape.system);
    let mut summary: Option<NodeId> = None;
    for c in chunks {
        let mut user = Vec::new();
        if let Some(s) = summary {
            user.push(text(b, "summary-header", 2));
            user.push(Piece::Ref(s));
        }
        user.push(text(b, "chunk-header", 2));
        user.push(Piece::Ref(c));
        let sys = (Role::System, vec![Piece::Text(b.text("summarizer", sys_len))]);
        let len = out_len(b);
        summary = Some(b.llm(vec![sys, (Role::User, user)], len));
    }
    b.output(summary.expect("at least one chunk"));
}

/// Experts with distinct roles extract insights from every chunk; a writer
/// merges them.
pub(super) fn parallel(b: &mut Builder<'_>) {
    let chunk_len = b.spec.shape.context;
    let chunks: Vec<NodeId> = (0..b.spec.rounds).map(|i| b.input(&format!("chunk-{i}"), chunk_len, false, false)).collect();
    let mut insights = Vec::new();
    for i in 0..b.spec.agents {
        let sys_len = b.jittered(b.spec.shape.system);
        let label = format!("analyst-{i}");
        for c in &chunks {
            let sys = (Role::System, vec![Piece::Text(b.text(&label, sys_len))]);
            let user = vec![text(b, "chunk-header", 2), Piece::Ref(*c)];
            let len = out_len(b);
            insights.push(b.llm(vec![sys, (Role::User, user)], len));
        }
    }
    let sys = system(b, "writer");
    let mut user = vec![text(b, "insights-header", 2)];
    user.extend(insights.iter().map(|i| Piece::Ref(*i)));
    let len = out_len(b);
    let report = b.llm(vec![sys, (Role::User, user)], len);
    b.output(report);
}

/// Analyst, research and decision stages of a small trading desk.
///
/// Four analysts read one document each; the fundamentals and social
/// documents do not change from day to day. Two researchers debate the
/// reports and a manager writes the plan. Every trader chain starts from its
/// own, identically defined briefing of the plan, then a trader decides and
/// two risk agents, the same in every chain, debate the decision. A fund
/// manager aggregates all chains. One compliance operator feeds no
/// output.
pub(super) fn trading_mini(b: &mut Builder<'_>) {
    let shape = b.spec.shape;
    let ticker = b.input("ticker", shape.question, false, false);
    let analysts = [("market", true), ("social", false), ("news", true), ("fundamentals", false)];
    let mut reports = Vec::new();
    for (name, daily) in analysts {
        let doc = b.input(&format!("{name}-doc"), shape.context, false, daily);
        let sys = system(b, &format!("{name}-analyst"));
        let user = vec![text(b, "ticker-header", 2), Piece::Ref(ticker), text(b, "document-header", 2), Piece::Ref(doc)];
        let len = out_len(b);
        reports.push(b.llm(vec![sys, (Role::User, user)], len));
    }

    let sides = ["bull", "bear"];
    let side_lens: Vec<usize> = sides.iter().map(|_| b.jittered(shape.system)).collect();
    let mut prev: Vec<NodeId> = Vec::new();
    for round in 0..b.spec.rounds {
        let mut cur = Vec::new();
        for (i, side) in sides.iter().enumerate() {
            let mut user = vec![text(b, "ticker-header", 2), Piece::Ref(ticker), text(b, "reports-header", 2)];
            user.extend(reports.iter().map(|r| Piece::Ref(*r)));
            let mut msgs = vec![
                (Role::System, vec![Piece::Text(b.text(&format!("{side}-researcher"), side_lens[i]))]),
                (Role::User, user),
            ];
            if round > 0 {
                msgs.push((Role::Assistant, vec![Piece::Ref(prev[i])]));
                msgs.push((Role::User, vec![text(b, "rebuttal-header", 2), Piece::Ref(prev[1 - i])]));
            }
            let len = out_len(b);
            cur.push(b.llm(msgs, len));
        }
        prev = cur;
    }
    let sys = system(b, "research-manager");
    let mut user = vec![text(b, "ticker-header", 2), Piece::Ref(ticker), text(b, "debate-header", 2)];
    user.extend(prev.iter().map(|p| Piece::Ref(*p)));
    let len = out_len(b);
    let plan = b.llm(vec![sys, (Role::User, user)], len);

    let brief_sys_len = b.jittered(shape.system);
    let brief_len = 2 * shape.output;
    let risk = ["risk-aggressive", "risk-conservative"];
    let risk_lens: Vec<usize> = risk.iter().map(|_| b.jittered(shape.system)).collect();
    let mut decisions = Vec::new();
    let mut reviews = Vec::new();
    for t in 0..b.spec.agents {
        let brief = b.llm(
            vec![
                (Role::System, vec![Piece::Text(b.text("briefing", brief_sys_len))]),
                (Role::User, vec![text(b, "plan-header", 2), Piece::Ref(plan)]),
            ],
            brief_len,
        );
        let sys = system(b, &format!("trader-{t}"));
        let user = vec![
            text(b, "ticker-header", 2),
            Piece::Ref(ticker),
            text(b, "briefing-header", 2),
            Piece::Ref(brief),
            text(b, "plan-header", 2),
            Piece::Ref(plan),
        ];
        let len = out_len(b);
        let decision = b.llm(vec![sys, (Role::User, user)], len);
        // The risk agents debate every chain's decision with the same
        // prompts.
        let mut prev: Vec<NodeId> = Vec::new();
        for round in 0..b.spec.rounds {
            let mut cur = Vec::new();
            for (i, name) in risk.iter().enumerate() {
                let mut msgs = vec![
                    (Role::System, vec![Piece::Text(b.text(name, risk_lens[i]))]),
                    (
                        Role::User,
                        vec![text(b, "ticker-header", 2), Piece::Ref(ticker), text(b, "decision-header", 2), Piece::Ref(decision)],
                    ),
                ];
                if round > 0 {
                    msgs.push((Role::Assistant, vec![Piece::Ref(prev[i])]));
                    msgs.push((Role::User, vec![text(b, "rebuttal-header", 2), Piece::Ref(prev[1 - i])]));
                }
                let len = out_len(b);
                cur.push(b.llm(msgs, len));
            }
            prev = cur;
        }
        decisions.push(decision);
        reviews.push(prev);
    }
    // A compliance log nobody reads: dead weight for plan pruning.
    let sys = system(b, "compliance-log");
    let user = vec![text(b, "ticker-header", 2), Piece::Ref(ticker), text(b, "plan-header", 2), Piece::Ref(plan)];
    let len = out_len(b);
    b.llm(vec![sys, (Role::User, user)], len);

    let sys = system(b, "fund-manager");
    let mut user = vec![text(b, "ticker-header", 2), Piece::Ref(ticker), text(b, "chains-header", 2)];
    for (d, r) in decisions.iter().zip(&reviews) {
        user.push(Piece::Ref(*d));
        user.extend(r.iter().map(|x| Piece::Ref(*x)));
    }
    let len = out_len(b);
    let verdict = b.llm(vec![sys, (Role::User, user)], len);
    b.output(verdict);
}
