"""Exception types raised across the SDX pipeline."""


class SdxError(Exception):
    """Base class for every error raised by sdxsim."""


class PolicySyntaxError(SdxError):
    def __init__(self, position, expected, found=None):
        self.position = position
        self.expected = expected
        self.found = found
        msg = f"at byte {position}: expected {expected}"
        if found is not None:
            msg += f", found {found!r}"
        super().__init__(msg)


class UnknownPeer(SdxError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown participant {name!r}")


class UnsupportedField(SdxError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unsupported match field {name!r}")


class BgpdSyntaxError(SdxError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MissingRouterId(SdxError):
    def __init__(self):
        super().__init__("no 'bgp router-id' statement in router bgp block")


class EmptyCandidates(SdxError):
    pass


class DuplicateRouterId(SdxError):
    def __init__(self, router_id):
        self.router_id = router_id
        super().__init__(f"router-id {router_id} used by more than one participant")


class DuplicateParticipant(SdxError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"participant {name!r} defined more than once")


class PoolExhausted(SdxError):
    def __init__(self, needed, available):
        self.needed = needed
        self.available = available
        super().__init__(f"VNH pool exhausted: need {needed}, have {available}")


class InconsistentState(SdxError):
    pass


class AmbiguousForward(SdxError):
    def __init__(self, participant, actions):
        self.participant = participant
        self.actions = actions
        super().__init__(
            f"{participant}: {len(actions)} distinct applicable actions: "
            + ", ".join(sorted(str(a) for a in actions))
        )


class CompileError(SdxError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class ScenarioParseError(SdxError):
    def __init__(self, path, location, message):
        self.path = path
        self.location = location
        super().__init__(f"{path}:{location}: {message}")


class ScenarioValidationError(SdxError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.problems))
