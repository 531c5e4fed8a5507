import logging
import inspect

class IndentFormatter(logging.Formatter):
    """
    A custom logging formatter that indents messages by call stack depth so
    nested pipeline stages (campaign -> simulation -> remesh) read as a tree.
    Attributes:
        baseline (int): The stack depth when the formatter is initialized.
        colored (bool): Wrap records in ANSI colors by level (terminal only).
    Methods:
        format(rec):
            Formats the specified record as text, adding the indentation.
    """
    grey = "\x1b[38;20m"
    yellow = "\x1b[33;20m"
    red = "\x1b[31;20m"
    bold_red = "\x1b[31;1m"
    reset = "\x1b[0m"

    COLORS = {
        logging.DEBUG: grey,
        logging.INFO: grey,
        logging.WARNING: yellow,
        logging.ERROR: red,
        logging.CRITICAL: bold_red
    }

    def __init__(self, fmt=None, datefmt=None, colored=True):
        logging.Formatter.__init__(self, fmt, datefmt)
        self.baseline = len(inspect.stack(0))
        self.colored = colored

    def format(self, rec):
        depth = len(inspect.stack(0)) - self.baseline - 3
        rec.indent = '  ' * max(0, min(depth, 12))
        out = logging.Formatter.format(self, rec)
        del rec.indent
        if self.colored:
            return self.COLORS.get(rec.levelno, self.grey) + out + self.reset
        return out

# One process-wide logger; progress goes to stderr, never to stdout.

LOG_FORMAT = "%(asctime)s - (%(filename)24s:%(lineno)-4d) - [%(levelname)-7s]: %(indent)s%(message)s"

formatter = IndentFormatter(LOG_FORMAT)
logger = logging.getLogger('woundsurrogate')
handler = logging.StreamHandler()
handler.setFormatter(formatter)
logger.addHandler(handler)
logger.setLevel(logging.INFO)

def setDebugMode():
    logger.setLevel(logging.DEBUG)
    logger.debug("Debug mode is on...")

def addRunLogFile(path):
    """Mirror every record into `path` (uncolored). Returns the handler so it can be detached."""
    file_handler = logging.FileHandler(path, mode='w', encoding='utf-8')
    file_handler.setFormatter(IndentFormatter(LOG_FORMAT, colored=False))
    logger.addHandler(file_handler)
    return file_handler

def removeRunLogFile(file_handler):
    logger.removeHandler(file_handler)
    file_handler.close()
