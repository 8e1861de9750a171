"""Allow ``python -m splitsgd`` to behave like the installed script."""

from .cli import main

main()
