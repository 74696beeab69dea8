import pytest

from behavior_trees.bt_core import MissingAttribute, NodeKind, parse_bt
from helpers import FIXTURES, QueueGateway
from planning.planner import (
    SINGLE_OBJECT_REMINDER,
    CompletionCondition,
    DecompositionPlan,
    EmptyInstruction,
    MalformedDecomposition,
    MalformedResponse,
    NoXmlFound,
    PlanningConstraints,
    SubTask,
    TaskContext,
    TaskRequest,
    decompose_task,
    extract_xml,
    interpret_task,
    parse_decomposition,
    parse_interpretation,
    plan_subtask_bt,
    sanitize_identifier,
)
from planning.templates import PromptLibrary, TemplateError
from simulation.predicates import DEFAULT_REGISTRY, UnknownPredicate

COFFEE_DECOMPOSITION = (
    "Layer 1: locate_mug | isHolding(mug)=true\n"
    "Layer 2: fill_mug | isFilledWith(mug)=coffee\n"
    "Layer 3: place_mug_on_table | isOnTop(mug, table)=true\n"
)
LOCATE_MUG = (FIXTURES / "golden" / "mug" / "plan__locate_mug__0.txt").read_text(encoding="utf-8")
VIEWS = ["View 1/4 facing 0 degrees\n- mug: ahead, near (3 cells)"]


def _ctx():
    return TaskContext("bring_coffee_to_table", "A counter with a mug.")


def _subtask(name="locate_mug", layer=1):
    return SubTask(name, layer, CompletionCondition("isHolding", ("mug",), True))


def _constraints(coffee_world):
    return PlanningConstraints.from_world(coffee_world)


# ---------------------------------------------------------- interpretation

@pytest.mark.parametrize(
    "raw, expected",
    [("Bring Coffee!", "bring_coffee"), ("  bring-coffee  to table ", "bring_coffee_to_table"), ("ÄÖ ok", "ok")],
)
def test_sanitize_identifier(raw, expected):
    assert sanitize_identifier(raw) == expected


def test_parse_interpretation_is_lenient_about_marker_case():
    ctx = parse_interpretation("Task Id: Bring Coffee!\nContext: The mug is on the counter.\nIt is empty.")
    assert ctx.task_id == "bring_coffee"
    assert ctx.context_text == "The mug is on the counter.\nIt is empty."


def test_parse_interpretation_without_context():
    assert parse_interpretation("TASK_ID: soak_mug").context_text == ""


def test_empty_instruction():
    with pytest.raises(EmptyInstruction):
        TaskRequest("   ")


def test_task_context_rejects_bad_identifiers():
    with pytest.raises(ValueError):
        TaskContext("Bring Coffee")


def test_interpret_task_sends_views_as_blobs():
    fixture = (FIXTURES / "golden" / "coffee" / "interpret__0.txt").read_text(encoding="utf-8")
    gateway = QueueGateway([fixture])

    ctx = interpret_task(TaskRequest("Bring a mug of coffee to the table"), VIEWS, gateway)

    assert ctx.task_id == "bring_coffee_to_table"
    call = gateway.calls[0]
    assert (call["stage"], call["attempt"], call["repair"]) == ("interpret", 0, False)
    user = call["messages"][-1]
    assert "Bring a mug of coffee to the table" in user.text()
    assert [blob.decoded() for blob in user.blobs()] == VIEWS


def test_interpret_task_repairs_format_once():
    gateway = QueueGateway(["I think the task is about coffee.", "TASK_ID: coffee\nCONTEXT: kitchen"])

    ctx = interpret_task(TaskRequest("make coffee"), VIEWS, gateway)

    assert ctx.task_id == "coffee"
    assert [c["repair"] for c in gateway.calls] == [False, True]
    assert gateway.calls[1]["messages"][-2].text() == "I think the task is about coffee."


def test_interpret_task_gives_up_after_repair():
    gateway = QueueGateway(["no idea", "still no idea"])
    with pytest.raises(MalformedResponse):
        interpret_task(TaskRequest("make coffee"), VIEWS, gateway)
    assert len(gateway.calls) == 2


# ----------------------------------------------------------- decomposition

def test_parse_decomposition_builds_layers():
    plan = parse_decomposition(COFFEE_DECOMPOSITION)

    assert [[s.name for s in layer] for layer in plan.layers] == [["locate_mug"], ["fill_mug"], ["place_mug_on_table"]]
    assert plan.layers[2][0].condition == CompletionCondition("isOnTop", ("mug", "table"), True)
    assert plan.layers[1][0].condition.expected == "coffee"
    assert plan.layers[1][0].condition.render() == "isFilledWith(mug)=coffee"
    assert len(plan) == 3


def test_parse_decomposition_groups_same_layer_and_canonicalizes_aliases():
    plan = parse_decomposition(
        "```\n"
        "Layer 2: put_fork | On(fork, table)=true\n"
        "\n"
        "Layer 1: put_plate | On(plate, table)=true\n"
        "Layer 2: put_knife | On(knife, table)=true\n"
        "Layer 3: faucet | FaucetOn(sink)\n"
        "```\n"
    )
    assert [[s.name for s in layer] for layer in plan.layers] == [["put_plate"], ["put_fork", "put_knife"], ["faucet"]]
    assert plan.layers[0][0].condition.predicate == "isOnTop"
    assert plan.layers[2][0].condition.predicate == "FaucetOn"


@pytest.mark.parametrize(
    "text",
    [
        "1. locate the mug",
        "Layer 1: Locate Mug | isHolding(mug)=true",
        "Layer 0: locate_mug | isHolding(mug)=true",
        "Layer 1: a | isHolding(mug)\nLayer 2: a | isOpen(fridge)",
        "Layer 1: a | isHolding(mug, cup)=true",
        "Layer 1: a | holding the mug",
        "",
    ],
)
def test_parse_decomposition_rejects_malformed_text(text):
    with pytest.raises(MalformedDecomposition):
        parse_decomposition(text)


def test_decomposition_plan_needs_layers():
    with pytest.raises(MalformedDecomposition):
        DecompositionPlan(layers=[])


def test_unknown_predicates_are_collected():
    with pytest.raises(UnknownPredicate) as excinfo:
        parse_decomposition("Layer 1: a | isShiny(mug)=true\nLayer 2: b | isSparkly(mug)\nLayer 3: c | isShiny(cup)")
    assert excinfo.value.names == ("isShiny", "isSparkly")


def test_decompose_prompt_lists_the_registry():
    gateway = QueueGateway([COFFEE_DECOMPOSITION])

    decompose_task(_ctx(), TaskRequest("bring coffee"), DEFAULT_REGISTRY, gateway)

    prompt = gateway.prompt()
    assert "bring coffee" in prompt
    assert "A counter with a mug." in prompt
    for name in DEFAULT_REGISTRY.predicates:
        assert name in prompt


def test_decompose_unknown_predicate_gets_one_correction():
    gateway = QueueGateway(["Layer 1: shine | isShiny(mug)=true", COFFEE_DECOMPOSITION])

    plan = decompose_task(_ctx(), TaskRequest("bring coffee"), DEFAULT_REGISTRY, gateway)

    assert len(plan) == 3
    assert [(c["attempt"], c["repair"]) for c in gateway.calls] == [(0, False), (1, False)]
    assert "isShiny" in gateway.prompt()


def test_decompose_unknown_predicate_after_correction_fails():
    gateway = QueueGateway(["Layer 1: shine | isShiny(mug)=true", "Layer 1: shine | isShiny(mug)=true"])

    with pytest.raises(UnknownPredicate):
        decompose_task(_ctx(), TaskRequest("bring coffee"), DEFAULT_REGISTRY, gateway)
    assert len(gateway.calls) == 2


def test_decompose_format_repair_then_failure():
    gateway = QueueGateway(["first get the mug", "then fill it"])

    with pytest.raises(MalformedDecomposition):
        decompose_task(_ctx(), TaskRequest("bring coffee"), DEFAULT_REGISTRY, gateway)
    assert [c["repair"] for c in gateway.calls] == [False, True]


# ----------------------------------------------------------- xml recovery

def test_extract_xml_strips_prose_and_fences():
    response = f"Here is the tree: ```xml\n{LOCATE_MUG}``` hope it helps"
    assert parse_bt(extract_xml(response)) == parse_bt(LOCATE_MUG)


def test_extract_xml_identity_on_bare_xml():
    assert extract_xml(LOCATE_MUG.strip()) == LOCATE_MUG.strip()


def test_extract_xml_takes_first_complete_element():
    response = 'Try <Action name="Grab" target="mug"/> or maybe <Sequence><Action name="Place"/></Sequence>'
    assert extract_xml(response) == '<Action name="Grab" target="mug"/>'


def test_extract_xml_quotes_bare_attribute_values():
    tree = parse_bt(extract_xml("<Sequence><Action name=Grab target=mug/></Sequence>"))
    assert tree.root.children[0].attrs == {"name": "Grab", "target": "mug"}


def test_extract_xml_reads_past_angle_brackets_in_quoted_values():
    response = (
        'Here you go: <Sequence><Condition name="isFilledWith" target="mug" value="level > 2"/>'
        "<Action name=Grab target=mug note='a b=c'/></Sequence> done."
    )

    tree = parse_bt(extract_xml(response))

    condition, action = tree.root.children
    assert condition.get("value") == "level > 2"
    assert action.attrs == {"name": "Grab", "target": "mug", "note": "a b=c"}


@pytest.mark.parametrize("response", ["no tree, sorry", "<Sequence><Selector>", "<Parallel/>"])
def test_extract_xml_without_element(response):
    with pytest.raises(NoXmlFound):
        extract_xml(response)


# ---------------------------------------------------------------- planning

def test_plan_subtask_prompt_and_tree(coffee_world):
    gateway = QueueGateway([LOCATE_MUG])
    completed = [SubTask("open_door", 1, CompletionCondition("isOpen", ("door",), True))]

    tree = plan_subtask_bt(_subtask(), _ctx(), completed, _constraints(coffee_world), gateway,
                           TaskRequest("bring coffee"))

    assert tree.root.kind is NodeKind.SEQUENCE
    assert [a.get("name") for a in tree.actions()] == ["ScanRoom", "Navigate_To", "Grab"]
    call = gateway.calls[0]
    assert (call["stage"], call["subtask"], call["attempt"]) == ("plan", "locate_mug", 0)
    prompt = gateway.prompt()
    assert SINGLE_OBJECT_REMINDER in prompt
    assert "isHolding(mug)=true" in prompt
    assert "open_door (isOpen(door)=true)" in prompt
    assert "coffee_mug (mug)" in prompt
    assert "Navigate_To(target)" in prompt
    assert "without additional text" in prompt


def test_plan_subtask_fenced_answer_gives_same_tree(coffee_world):
    gateway = QueueGateway([f"```xml\n{LOCATE_MUG}\n```"])
    tree = plan_subtask_bt(_subtask(), _ctx(), [], _constraints(coffee_world), gateway, TaskRequest("bring coffee"))
    assert tree == parse_bt(LOCATE_MUG)
    assert len(gateway.calls) == 1


def test_plan_subtask_repairs_once_then_raises(coffee_world):
    gateway = QueueGateway(["I would grab the mug.", "Sorry, I cannot write XML."])

    with pytest.raises(NoXmlFound):
        plan_subtask_bt(_subtask(), _ctx(), [], _constraints(coffee_world), gateway, TaskRequest("bring coffee"))
    assert [c["repair"] for c in gateway.calls] == [False, True]


def test_plan_subtask_parse_error_after_repair(coffee_world):
    gateway = QueueGateway(["<Action target='mug'/>", "<Action target='mug'/>"])

    with pytest.raises(MissingAttribute):
        plan_subtask_bt(_subtask(), _ctx(), [], _constraints(coffee_world), gateway, TaskRequest("bring coffee"))


def test_plan_subtask_recovers_after_repair(coffee_world):
    gateway = QueueGateway(["<Selector/>", LOCATE_MUG])
    tree = plan_subtask_bt(_subtask(), _ctx(), [], _constraints(coffee_world), gateway, TaskRequest("bring coffee"))
    assert len(tree.actions()) == 3


# --------------------------------------------------------------- templates

def test_template_fingerprint_tracks_template_text(tmp_path):
    for path in (FIXTURES.parent / "templates" / "prompts").glob("*.txt"):
        (tmp_path / path.name).write_text(path.read_text(encoding="utf-8"), encoding="utf-8")
    copied = PromptLibrary(tmp_path)
    assert copied.fingerprint() == PromptLibrary().fingerprint()

    plan = tmp_path / "plan.txt"
    plan.write_text(plan.read_text(encoding="utf-8") + "\nAlways grab the apple first.", encoding="utf-8")
    edited = PromptLibrary(tmp_path)

    assert edited.fingerprint() != copied.fingerprint()
    changed = [name for name, digest in edited.digests().items() if copied.digests()[name] != digest]
    assert changed == ["plan"]


def test_template_without_version_header(tmp_path):
    for path in (FIXTURES.parent / "templates" / "prompts").glob("*.txt"):
        (tmp_path / path.name).write_text(path.read_text(encoding="utf-8"), encoding="utf-8")
    (tmp_path / "plan.txt").write_text("Plan $subtask", encoding="utf-8")

    with pytest.raises(TemplateError, match="version"):
        PromptLibrary(tmp_path)


def test_template_missing_slot():
    with pytest.raises(TemplateError, match="instruction"):
        PromptLibrary().render("interpret", view_count="4")
