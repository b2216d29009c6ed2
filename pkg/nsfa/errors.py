from typing import Optional


class InvalidStateError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)
