from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmopt.engine import Archive, archive_update
from llmopt.errors import FormatError, RenderError
from llmopt.problems import make_problem
from llmopt.prompting import (
    NumberFormat,
    PromptBuilder,
    PromptTemplate,
    assemble_prompt,
    format_number,
    get_template,
    load_prompt_pool,
    pool_size,
    render_cities,
    render_history,
    render_solution,
    render_task,
)
from llmopt.tsp import load_fixture, make_view, random_instance

from conftest import golden

SOL = (-2.6711006, -3.2130612)
THREE_ENTRIES = [(SOL, 18.706458), (SOL, 13.763811), (SOL, 11.341559)]


@pytest.mark.parametrize("digits,expected", [(1, "-2.7"), (3, "-2.671"), (5, "-2.67110")])
def test_format_number_reference_digits(digits, expected):
    assert format_number(-2.6711006, NumberFormat(digits)) == expected


def test_format_number_rules():
    assert format_number(0.125, 2) == "0.13"
    assert format_number(-0.125, 2) == "-0.13"
    assert format_number(2.5, 0) == "3"
    assert format_number(-0.0001, 2) == "0.00"
    assert format_number(1e20, 1) == "100000000000000000000.0"
    assert "e" not in format_number(1e-12, 3)
    for bad in (float("nan"), float("inf"), -float("inf")):
        with pytest.raises(FormatError):
            format_number(bad, 3)
    with pytest.raises(ValueError):
        NumberFormat(-1)


@settings(max_examples=500, deadline=None)
@given(st.floats(-1e6, 1e6, allow_nan=False), st.integers(0, 8))
def test_format_number_error_bound(x, d):
    text = format_number(x, d)
    assert "e" not in text.lower()
    assert not text.startswith("-0") or any(c not in "-0." for c in text)
    if d:
        assert len(text.split(".")[1]) == d
    assert abs(Decimal(text) - Decimal(repr(x))) <= Decimal(5) * Decimal(10) ** (-d - 1)


@pytest.mark.parametrize("digits", [1, 3, 5])
def test_history_digit_variants(digits):
    text = render_history([(SOL, 18.706458)], NumberFormat(digits), "continuous")
    assert text == golden(f"history_digits{digits}.txt")


def test_history_three_entries():
    text = render_history(THREE_ENTRIES, NumberFormat(5), "continuous")
    assert text == golden("history_three_entries.txt")
    assert "value: 18.70646" in text


def test_history_order_and_size():
    text = render_history([((1.0,), 5.0), ((2.0,), 1.0)], NumberFormat(1), "continuous")
    assert text.index("value: 5.0") < text.index("value: 1.0")
    asc = render_history([((1.0,), 5.0), ((2.0,), 1.0)], NumberFormat(1), "continuous", order="ascend")
    assert asc.index("value: 1.0") < asc.index("value: 5.0")
    archive = archive_update(Archive(16), [((float(i),), float(100 - i)) for i in range(40)])
    text = render_history(archive.entries, NumberFormat(2), "continuous")
    blocks = text.split("\n\n")
    assert len(blocks) == 16
    values = [float(b.split("value: ")[1]) for b in blocks]
    assert values == sorted(values, reverse=True)


def test_history_tsp_and_errors():
    text = render_history([((0, 2, 1), 12.0)], NumberFormat(2), "tsp")
    assert text == "<trace>0,2,1</trace>\nlength: 12.00"
    with pytest.raises(RenderError):
        render_history([], NumberFormat(2), "tsp")
    with pytest.raises(RenderError):
        render_history([((0, 1, 2), 1.0)], NumberFormat(2), "tsp", order="sideways")


def test_task_sphere_2d():
    text = render_task(make_problem("sphere", 2), NumberFormat(5))
    assert text == golden("task_sphere_2d.txt")
    assert "2 decision variables" in text and "-5.12" in text and "5.12" in text


def test_task_bounds_for_other_functions():
    text = render_task(make_problem("ackley", 2), NumberFormat(5))
    assert "between -32.768 and 32.768" in text
    text = render_task(make_problem("rosenbrock", 3), NumberFormat(5))
    assert "between -5 and 10" in text and "The three decision variables" in text


def test_task_grid15_coordinates():
    view = make_view(load_fixture("grid15"), "true")
    template = get_template("tsp")
    text = render_task(view, NumberFormat(5), template) + "\n\n" + template.transition
    assert text == golden("task_grid15_coords.txt")
    assert "(0): (74, 39), (1): (7, 24)" in text


def test_task_us15_names_only():
    view = make_view(load_fixture("us_cities15"), "names_only")
    template = get_template("tsp")
    text = render_task(view, NumberFormat(5), template) + "\n\n" + template.transition
    assert text == golden("task_us15_names.txt")
    assert "(0): San Diego, (1): Philadelphia" in text


def test_names_and_coords_listing():
    view = make_view(load_fixture("us_cities15"), "names_and_coords")
    text = render_cities(view, NumberFormat(2))
    assert text.startswith("(0): San Diego (32.")


def test_non_integer_coordinates_use_format():
    view = make_view(random_instance(4, 0), "true")
    view = type(view)(view.mode, ((0.5, 1.0), (2.25, 3.0), (4.0, 5.0), (6.0, 7.125)))
    assert render_cities(view, NumberFormat(1)).startswith("(0): (0.5, 1), (1): (2.3, 3)")


def test_template_mismatch():
    with pytest.raises(RenderError):
        render_task(make_problem("sphere", 2), NumberFormat(2), get_template("tsp"))
    with pytest.raises(RenderError):
        render_task(make_view(random_instance(4, 0), "true"), NumberFormat(2), get_template("continuous"))
    with pytest.raises(RenderError):
        render_task("a string", NumberFormat(2))


def test_assemble_prompt():
    template = get_template("tsp", 1)
    prompt = assemble_prompt(template, "TASK", "HISTORY")
    assert prompt == f"TASK\n\n{template.transition}\n\nHISTORY\n\n{template.instruction}"
    assert prompt.count("Below are some previous traces and their lengths.") == 1
    bare = PromptTemplate("x", "continuous", "", "", "")
    assert assemble_prompt(bare, "TASK", "HISTORY").endswith("HISTORY")
    assert assemble_prompt(template, "TASK", "HISTORY") == prompt


def test_prompt_pool():
    pool = load_prompt_pool()
    assert pool_size("tsp") == pool_size("continuous") == 5
    for instr in pool["tsp"]["instructions"]:
        assert "<trace>" in instr and "</trace>" in instr
    for instr in pool["continuous"]["instructions"]:
        assert "<solution>" in instr and "</solution>" in instr
    with pytest.raises(RenderError):
        get_template("tsp", 5)
    with pytest.raises(RenderError):
        get_template("knapsack")


def test_render_solution():
    assert render_solution((0, 2, 1), "tsp") == "<trace>0,2,1</trace>"
    assert render_solution((0.1, -2.0), "continuous") == "<solution>0.1,-2.0</solution>"
    assert render_solution((0.123456,), "continuous", NumberFormat(2)) == "<solution>0.12</solution>"


def test_builder_is_pure_and_grows_with_archive():
    problem = make_problem("sphere", 2)
    template = get_template("continuous")
    builder = PromptBuilder(render_task(problem, NumberFormat(3)), template, NumberFormat(3))
    small = [((0.1, 0.2), 0.05)]
    big = [((0.1 * i, 0.2), 0.05 * i) for i in range(16, 0, -1)]
    assert builder(small) == builder(small)
    assert len(builder(big)) > len(builder(small))
    assert builder(small).endswith(template.instruction)
