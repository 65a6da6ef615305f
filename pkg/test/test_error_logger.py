#!/usr/bin/env python3
# test_error_logger.py - Test structured error logging and exit-code classification

import io
import json
import os
import sys
import unittest
from unittest.mock import patch

import numpy as np

# Add the parent directory to sys.path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from socketlsh.errors import (CheckFailure, DimensionMismatchError, FormatError, ParameterError,
                              SelectionError, StorageError)
from socketlsh.error_logger import classify_error, log_error, log_event


class TestLogError(unittest.TestCase):

    @patch('sys.stderr', new_callable=io.StringIO)
    def test_json_record(self, mock_stderr):
        # Setup
        try:
            raise FormatError("not an SKT1 file (bad magic)")
        except FormatError as e:
            error = e

        # Execute
        log_error({"command": "attend", "path": "kv.skt1"}, error, exit_code=2)

        # Assert
        record = json.loads(mock_stderr.getvalue())
        self.assertEqual(record["level"], "error")
        self.assertEqual(record["context"]["command"], "attend")
        self.assertEqual(record["error"]["type"], "format_error")
        self.assertEqual(record["error"]["message"], "not an SKT1 file (bad magic)")
        self.assertIn("Traceback", record["error"]["details"])
        self.assertEqual(record["exit_code"], 2)
        self.assertTrue(record["timestamp"].endswith("Z"))

    @patch('sys.stderr', new_callable=io.StringIO)
    def test_unraised_error_has_no_details(self, mock_stderr):
        log_error({"command": "gen"}, ValueError("bad"), "invalid_input")
        record = json.loads(mock_stderr.getvalue())
        self.assertIsNone(record["error"]["details"])
        self.assertEqual(record["error"]["type"], "invalid_input")


class TestLogEvent(unittest.TestCase):

    @patch('sys.stderr', new_callable=io.StringIO)
    def test_numpy_fields(self, mock_stderr):
        log_event("check", name="slope_in_window", passed=np.bool_(True), value=np.float64(0.5))
        record = json.loads(mock_stderr.getvalue())
        self.assertEqual(record["event"], "check")
        self.assertEqual(record["level"], "info")
        self.assertIs(record["passed"], True)
        self.assertEqual(record["value"], 0.5)

    @patch('socketlsh.error_logger.SOCKET_LOG_LEVEL', "warning")
    @patch('sys.stderr', new_callable=io.StringIO)
    def test_level_filter(self, mock_stderr):
        log_event("run_started")
        log_event("check", level="warning", passed=False)
        lines = mock_stderr.getvalue().splitlines()
        self.assertEqual(len(lines), 1)
        self.assertEqual(json.loads(lines[0])["level"], "warning")


class TestClassifyError(unittest.TestCase):

    def test_library_errors(self):
        self.assertEqual(classify_error(ParameterError("x")), ("parameter_error", 2))
        self.assertEqual(classify_error(DimensionMismatchError("x")), ("dimension_mismatch", 2))
        self.assertEqual(classify_error(SelectionError("x")), ("selection_error", 2))
        self.assertEqual(classify_error(FormatError("x")), ("format_error", 2))
        self.assertEqual(classify_error(StorageError("x")), ("io_error", 3))
        self.assertEqual(classify_error(CheckFailure("x", ["a"])), ("check_failure", 1))

    def test_builtin_errors(self):
        self.assertEqual(classify_error(FileNotFoundError("x")), ("io_error", 3))
        self.assertEqual(classify_error(OSError("x")), ("io_error", 3))
        self.assertEqual(classify_error(ValueError("x")), ("invalid_input", 2))
        self.assertEqual(classify_error(RuntimeError("x")), ("unknown_error", 2))

    def test_check_failure_lists_names(self):
        failure = CheckFailure("2 check(s) failed", failed=("b", "a"))
        self.assertEqual(failure.failed, ["b", "a"])


if __name__ == '__main__':
    unittest.main()
