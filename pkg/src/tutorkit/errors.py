"""Exception hierarchy shared across the package.

Every error raised by tutorkit derives from TutorkitError so callers can
catch the whole family with one clause. HTTP mapping happens in the
service layer only.
"""


class TutorkitError(Exception):
    """Base class for all tutorkit errors."""


# --- content pack loading ---

class ParseError(TutorkitError):
    """Manifest file is malformed (bad JSON, wrong top-level shape)."""


class ValidationError(TutorkitError):
    """A content pack invariant is violated; message names the offending id."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class MissingAsset(TutorkitError):
    """An image_ref does not resolve to a file in the pack's asset directory."""


class NotFound(TutorkitError):
    """Lookup by id failed."""


# --- gateway / pipeline ---

class GatewayError(TutorkitError):
    """The LLM gateway call failed; the turn aborts with a retryable status."""


class MalformedJudgeOutput(TutorkitError):
    """Judge output failed structured parsing even after the repair retry."""


# --- sessions / activity engine ---

class SessionNotFound(TutorkitError):
    """No session exists for the given id."""


class SessionCompleted(TutorkitError):
    """The session already reached Completed; run_turn refuses it."""


class ActivityNotFound(TutorkitError):
    """No learning activity with this id exists in the pack."""


class ActivityLocked(TutorkitError):
    """A diagnosis was requested before its module unlock condition holds."""


class IllegalTransition(TutorkitError):
    """A facilitator decision cannot legally apply to the current state."""


class NotCompleted(TutorkitError):
    """completion_summary called on a session that is still in progress."""


# --- diagnosis ---

class DiagnosisLocked(TutorkitError):
    """Module activities are not all completed yet."""


class UnknownQuestion(TutorkitError):
    """question_id does not belong to the diagnosis."""


class AttemptFinished(TutorkitError):
    """Selections cannot change after the attempt is finished."""


class NotFinished(TutorkitError):
    """Scoring requires a finished attempt."""


# --- event store ---

class SchemaError(TutorkitError):
    """Event payload does not match the schema for its kind."""


class StorageError(TutorkitError):
    """The underlying store failed."""


# --- auth ---

class UserExists(TutorkitError):
    """Registration with a username that is already taken."""


class BadCredentials(TutorkitError):
    """Login with an unknown user or wrong password."""


# --- eval harness ---

class TooFewCases(TutorkitError):
    """Cannot split fewer cases than folds."""
