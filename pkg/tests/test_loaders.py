#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""输入输出工具测试"""

import json

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from core.errors import InvalidInput, InvalidObservation
from tools.loaders import (
    dumps_json,
    load_problem,
    read_choice_data,
    read_matrix,
    read_text,
    read_transition_graph,
    read_vector,
    write_json,
)


def test_read_text_handles_gbk(tmp_path):
    path = tmp_path / "notes.txt"
    path.write_bytes("矩阵平衡与选择模型的输入说明，包含中文字符。".encode("gbk"))

    assert read_text(path) == "矩阵平衡与选择模型的输入说明，包含中文字符。"


def test_read_text_missing_file(tmp_path):
    with pytest.raises(InvalidInput):
        read_text(tmp_path / "absent.txt")


def test_read_vector_with_bom(tmp_path):
    path = tmp_path / "p.csv"
    path.write_bytes("value\n1.5\n2\n3e-1\n".encode("utf-8-sig"))

    np.testing.assert_array_equal(read_vector(path), [1.5, 2.0, 0.3])


def test_read_vector_requires_header(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("1.0\n2.0\n", encoding="utf-8")

    with pytest.raises(InvalidInput):
        read_vector(path)


def test_read_vector_reports_bad_line(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("value\n1.0\nabc\n", encoding="utf-8")

    with pytest.raises(InvalidInput) as excinfo:
        read_vector(path)

    assert excinfo.value.details["line"] == 3


def test_read_matrix_coordinate(tmp_path):
    path = tmp_path / "a.mtx"
    scipy.io.mmwrite(str(path), sp.coo_matrix(np.array([[3.0, 1.0], [0.0, 2.0]])),
                     symmetry="general")

    matrix = read_matrix(path)

    np.testing.assert_array_equal(matrix.toarray(), [[3.0, 1.0], [0.0, 2.0]])
    assert matrix.nnz == 3


def test_read_matrix_rejects_array_format(tmp_path):
    path = tmp_path / "a.mtx"
    scipy.io.mmwrite(str(path), np.array([[3.0, 1.0], [0.0, 2.0]]))

    with pytest.raises(InvalidInput):
        read_matrix(path)


def test_read_matrix_missing_file(tmp_path):
    with pytest.raises(InvalidInput):
        read_matrix(tmp_path / "absent.mtx")


def test_load_problem(tmp_path):
    scipy.io.mmwrite(str(tmp_path / "a.mtx"), sp.coo_matrix(np.ones((2, 3))), symmetry="general")
    (tmp_path / "p.csv").write_text("value\n3\n3\n", encoding="utf-8")
    (tmp_path / "q.csv").write_text("value\n2\n2\n2\n", encoding="utf-8")

    prob = load_problem(tmp_path / "a.mtx", tmp_path / "p.csv", tmp_path / "q.csv")

    assert prob.a.shape == (2, 3)
    assert prob.total_mass == 6.0


def test_read_choice_data_mixed_lines(tmp_path):
    path = tmp_path / "choices.jsonl"
    path.write_text(
        '{"chosen": "a", "set": ["a", "b"]}\n'
        "\n"
        '{"ranking": ["c", "a", "b"]}\n',
        encoding="utf-8",
    )

    dataset = read_choice_data(path)

    assert len(dataset) == 3
    assert dataset.rankings is None
    assert dataset.items == ("a", "b", "c")


def test_read_choice_data_keeps_rankings(tmp_path):
    path = tmp_path / "rankings.jsonl"
    path.write_text('{"ranking": [1, 2, 3]}\n{"ranking": [3, 1]}\n', encoding="utf-8")

    dataset = read_choice_data(path)

    assert dataset.rankings == (("1", "2", "3"), ("3", "1"))
    assert len(dataset) == 3


def test_read_choice_data_reports_line_number(tmp_path):
    path = tmp_path / "choices.jsonl"
    path.write_text(
        '{"chosen": "a", "set": ["a", "b"]}\n'
        '{"chosen": "z", "set": ["a", "b"]}\n',
        encoding="utf-8",
    )

    with pytest.raises(InvalidObservation) as excinfo:
        read_choice_data(path)

    assert excinfo.value.details["line"] == 2


def test_read_choice_data_rejects_malformed_json(tmp_path):
    path = tmp_path / "choices.jsonl"
    path.write_text('{"chosen": "a", "set": ["a", "b"]}\n{"chosen": \n', encoding="utf-8")

    with pytest.raises(InvalidObservation) as excinfo:
        read_choice_data(path)

    assert excinfo.value.details["line"] == 2


def test_read_transition_graph(tmp_path):
    path = tmp_path / "graph.json"
    path.write_text(json.dumps({"edges": [
        {"source": "a", "target": "b", "count": 2},
        {"source": "b", "target": "a", "count": 1},
        {"source": "b", "target": "c"},
    ]}), encoding="utf-8")

    graph = read_transition_graph(path)

    assert graph.nodes == ("a", "b", "c")
    assert graph.out_neighbors["b"] == ("a", "c")
    assert graph.c_in.tolist() == [1.0, 2.0, 0.0]


def test_read_transition_graph_rejects_bad_schema(tmp_path):
    path = tmp_path / "graph.json"
    path.write_text('{"links": []}', encoding="utf-8")

    with pytest.raises(InvalidInput):
        read_transition_graph(path)


def test_json_output_is_deterministic(tmp_path):
    payload = {"b": np.array([1.0, 2.0]), "a": {"z": np.float64(0.5), "y": (1, 2)}, "名称": "平衡"}

    text = write_json(payload, tmp_path / "out" / "report.json")

    assert text == dumps_json(payload) + "\n"
    assert (tmp_path / "out" / "report.json").read_text(encoding="utf-8") == text
    assert text.index('"a"') < text.index('"b"')
    assert "平衡" in text
    assert json.loads(text)["b"] == [1.0, 2.0]
