"""Plan generation: compiling goal graphs into task graphs, agent matching.

One task per leaf goal. Dependency edges come from sibling relations: each
run of sequential siblings chains in id order (every leaf task under a later
sibling depends on every leaf task under the one before it); parallel
siblings share no edges; a conditional node adds edges from the goal its
condition references and stamps the guard onto its subtree's tasks.

Matching is deterministic: an agent is eligible iff the task's required tools
are a subset of its tools and the goal's ontology type is among its input
types; among eligible agents, pick highest success rate, then lowest cost per
call, then smallest agent id.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import (
    InvariantViolation,
    NoEligibleAgent,
    UnknownNode,
    UnknownOntologyToolMapping,
)
from .goal_model import GoalGraph, GoalNode, Ontology, Predicate, Relation
from .values import CmpOp, value_from_obj


class TaskState(str, Enum):
    BLOCKED = "blocked"
    READY = "ready"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"
    PAUSED = "paused"


def task_id_for(goal_id: str) -> str:
    return f"task-{goal_id}"


@dataclass(frozen=True)
class TaskSpec:
    id: str
    goal_id: str
    ontology_type: str
    required_tools: frozenset[str]
    depends_on: frozenset[str] = frozenset()
    guards: tuple[Predicate, ...] = ()
    agent_id: str | None = None
    state: TaskState = TaskState.BLOCKED
    pinned: bool = False  # manual assignment survives replans while eligible

    def to_obj(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "depends_on": sorted(self.depends_on),
            "goal_id": self.goal_id,
            "guards": [g.to_obj() for g in self.guards],
            "id": self.id,
            "ontology_type": self.ontology_type,
            "pinned": self.pinned,
            "required_tools": sorted(self.required_tools),
            "state": self.state.value,
        }

    @staticmethod
    def from_obj(obj: dict) -> "TaskSpec":
        return TaskSpec(
            id=obj["id"],
            goal_id=obj["goal_id"],
            ontology_type=obj["ontology_type"],
            required_tools=frozenset(obj["required_tools"]),
            depends_on=frozenset(obj["depends_on"]),
            guards=tuple(
                Predicate(
                    subject=g["subject"],
                    op=CmpOp(g["op"]),
                    value=value_from_obj(g["value"]),
                    goal=g.get("goal"),
                )
                for g in obj.get("guards", [])
            ),
            agent_id=obj.get("agent_id"),
            state=TaskState(obj.get("state", "blocked")),
            pinned=bool(obj.get("pinned", False)),
        )


@dataclass(frozen=True)
class TaskGraph:
    tasks: dict[str, TaskSpec] = field(default_factory=dict)

    def task(self, task_id: str) -> TaskSpec:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise UnknownNode(f"no task {task_id!r}") from None

    def for_goal(self, goal_id: str) -> TaskSpec | None:
        return self.tasks.get(task_id_for(goal_id))

    def ordered(self) -> list[TaskSpec]:
        return [self.tasks[t] for t in sorted(self.tasks)]

    def with_tasks(self, replacements: dict[str, TaskSpec]) -> "TaskGraph":
        merged = dict(self.tasks)
        merged.update(replacements)
        return TaskGraph(tasks=merged)

    def downstream(self, task_ids: set[str]) -> set[str]:
        """task_ids plus everything reachable through depends_on edges."""
        out = set(task_ids)
        changed = True
        while changed:
            changed = False
            for task in self.tasks.values():
                if task.id not in out and task.depends_on & out:
                    out.add(task.id)
                    changed = True
        return out

    def assert_acyclic(self) -> None:
        done: set[str] = set()
        visiting: set[str] = set()

        def visit(tid: str) -> None:
            if tid in done:
                return
            if tid in visiting:
                raise InvariantViolation(f"task dependency cycle through {tid!r}")
            visiting.add(tid)
            for dep in self.tasks[tid].depends_on:
                if dep in self.tasks:
                    visit(dep)
            visiting.discard(tid)
            done.add(tid)

        for tid in sorted(self.tasks):
            visit(tid)

    def to_obj(self) -> dict:
        return {"tasks": [t.to_obj() for t in self.ordered()]}

    @staticmethod
    def from_obj(obj: dict) -> "TaskGraph":
        tasks = [TaskSpec.from_obj(t) for t in obj.get("tasks", [])]
        return TaskGraph(tasks={t.id: t for t in tasks})


@dataclass(frozen=True)
class MatchEntry:
    task_id: str
    eligible: tuple[dict, ...]  # {agent_id, success_rate, cost} per candidate
    chosen: str
    trace: str

    def to_obj(self) -> dict:
        return {
            "chosen": self.chosen,
            "eligible": [dict(sorted(e.items())) for e in self.eligible],
            "task_id": self.task_id,
            "trace": self.trace,
        }


@dataclass(frozen=True)
class MatchReport:
    entries: tuple[MatchEntry, ...]

    def to_obj(self) -> dict:
        return {"entries": [e.to_obj() for e in self.entries]}


def _leaf_tasks_under(graph: GoalGraph, goal_id: str) -> list[str]:
    return [
        task_id_for(n.id)
        for n in graph.preorder()
        if n.id in graph.descendants(goal_id) and graph.is_leaf(n.id)
    ]


def compile(graph: GoalGraph, ontology: Ontology) -> TaskGraph:
    """Build the unassigned task skeleton for a valid goal graph."""
    tasks: dict[str, TaskSpec] = {}
    deps: dict[str, set[str]] = {}

    for leaf in graph.leaves():
        tools = ontology.tools_for(leaf.ontology_type)
        if not tools:
            raise UnknownOntologyToolMapping(
                f"ontology type {leaf.ontology_type!r} maps to no tools",
                ontology_type=leaf.ontology_type, goal_id=leaf.id,
            )
        guards = []
        cursor: GoalNode | None = leaf
        while cursor is not None:
            if cursor.relation is Relation.CONDITIONAL and cursor.condition:
                guards.append(cursor.condition)
            cursor = graph.nodes.get(cursor.parent) if cursor.parent else None
        tid = task_id_for(leaf.id)
        tasks[tid] = TaskSpec(
            id=tid,
            goal_id=leaf.id,
            ontology_type=leaf.ontology_type,
            required_tools=frozenset(tools),
            guards=tuple(reversed(guards)),
        )
        deps[tid] = set()

    for node in graph.preorder():
        chain = [c for c in graph.children(node.id) if c.relation is Relation.SEQUENTIAL]
        for earlier, later in zip(chain, chain[1:]):
            for src in _leaf_tasks_under(graph, earlier.id):
                for dst in _leaf_tasks_under(graph, later.id):
                    deps[dst].add(src)

    for node in graph.preorder():
        if node.relation is Relation.CONDITIONAL and node.condition:
            ref = node.condition.goal
            if ref is not None and ref in graph.nodes:
                for src in _leaf_tasks_under(graph, ref):
                    for dst in _leaf_tasks_under(graph, node.id):
                        if src != dst:
                            deps[dst].add(src)

    built = TaskGraph(tasks={
        tid: replace(task, depends_on=frozenset(deps[tid]))
        for tid, task in tasks.items()
    })
    built.assert_acyclic()
    return built


def _eligible(task: TaskSpec, matrices) -> list:
    return [
        m for m in matrices
        if task.required_tools <= m.tools and task.ontology_type in m.input_types
    ]


def _choice_key(matrix) -> tuple:
    return (-matrix.success_rate, matrix.cost_per_call.value, matrix.agent_id)


def assign(skeleton: TaskGraph, registry) -> tuple[TaskGraph, MatchReport]:
    """Deterministically pick an agent for every task in the skeleton."""
    assigned: dict[str, TaskSpec] = {}
    entries: list[MatchEntry] = []
    for task in skeleton.ordered():
        eligible = _eligible(task, registry.agents())
        if not eligible:
            raise NoEligibleAgent(
                f"no agent covers task {task.id!r}",
                task_id=task.id,
                required_tools=sorted(task.required_tools),
                ontology_type=task.ontology_type,
            )
        ranked = sorted(eligible, key=_choice_key)
        if task.pinned and task.agent_id in {m.agent_id for m in eligible}:
            chosen = task.agent_id
            trace = f"manual assignment to {chosen} kept (still eligible)"
        else:
            chosen = ranked[0].agent_id
            trace = (
                f"picked {chosen} by success_rate desc, cost asc, id asc "
                f"among {[m.agent_id for m in ranked]}"
            )
            task = replace(task, pinned=False)
        assigned[task.id] = replace(task, agent_id=chosen)
        entries.append(MatchEntry(
            task_id=task.id,
            eligible=tuple(
                {
                    "agent_id": m.agent_id,
                    "cost_per_call": m.cost_per_call.to_obj(),
                    "success_rate": m.success_rate,
                }
                for m in ranked
            ),
            chosen=chosen,
            trace=trace,
        ))
    return TaskGraph(tasks=assigned), MatchReport(entries=tuple(entries))


def replan_subgraph(
    task_graph: TaskGraph,
    affected_goal_ids,
    graph: GoalGraph,
    registry,
    ontology: Ontology,
) -> TaskGraph:
    """Recompile and reassign only affected goals and their downstream tasks.

    Every other task keeps its spec bit-identically (same object), so paused
    or running branches are untouched by the replan.
    """
    affected_tasks = {
        task_id_for(gid) for gid in affected_goal_ids
    }
    touched = task_graph.downstream(affected_tasks)
    if not touched:
        return task_graph

    fresh = compile(graph, ontology)
    rebuilt: dict[str, TaskSpec] = {}
    for tid, task in task_graph.tasks.items():
        if tid not in touched:
            rebuilt[tid] = task
        elif tid in fresh.tasks:
            new = fresh.tasks[tid]
            if task.pinned:
                new = replace(new, agent_id=task.agent_id, pinned=True)
            rebuilt[tid] = new
    for tid, task in fresh.tasks.items():
        if tid not in rebuilt:
            rebuilt[tid] = task

    needs_agent = TaskGraph(tasks={
        tid: t for tid, t in rebuilt.items() if tid in touched or t.agent_id is None
    })
    if needs_agent.tasks:
        assigned, _ = assign(needs_agent, registry)
        rebuilt.update(assigned.tasks)

    result = TaskGraph(tasks=rebuilt)
    result.assert_acyclic()
    return result
