# Built-in first-name inventory for the corpus simulator.  Spelling-variant
# families are kept next to each other on purpose.
FIRST_NAMES = """
john jon jonathan joan joanne jean jane janet janice june joe joey josh joshua joseph josie
sean shawn shaun shane shana sam samuel samantha sammy dong don donna donald dan daniel danny
danielle daniela dana anna ana anne ann annie hannah hana ken kenny kenneth karen karin caren
catherine katherine kathryn kathy kate katie cathy kat mark marc marco marcus mike michael michelle
micheal mitchell matt matthew mathew maddie madison mary maria marie mario marion marian miriam
chris christopher kristen kristin christine christina tina tim timothy tom thomas tommy tony
anthony antonio steve steven stephen stephanie stefan sara sarah sera serena lisa liza elisa
eliza elizabeth beth betty bethany ben benjamin benny brian bryan ryan rian rain ray raymond
rachel rachael rebecca becca rick ricky richard rich erik eric erica erika derek derrick
jeff geoff jeffrey geoffrey greg gregory craig carl karl carla carol carole caroline carolyn
lynn linda lyndon lindsay lindsey leslie lesley louis lewis luis lucy lucia lucas luke
nick nicholas nicole nicola nico nina nena neil neal nell nelly noah nora norah
amy aimee amie emily emilie emma emmy em ella ellen elena helen helena alan allen allan
alex alexander alexandra alexis alice alicia alyssa ali allie ally adam aidan aiden adrian
adriana andrea andrew andy angela angel angie gabriel gabriella gabby grace gracie gary garry
harry henry henri hank heather hector hugo hugh howard holly hollie ivan ian iain isaac isabel
isabella jack jackie jake jacob james jamie jaime jason jayson jasmine jessica jesse jessie
jenny jennifer jenna julia julie julian juliet justin dustin austin kevin kevan kyle kylie
laura lauren loren lorena leo leon leona leah lea lee levi liam logan lola lily lillian
megan meghan morgan martin martina mason max maxine melissa melanie molly mollie monica nathan
nathaniel natalie nate olivia oliver owen paul paula pauline peter pete phil philip phillip
rose rosa rosie ruth ruby russell sophia sofia sophie simon simone susan suzanne sue taylor
tyler teresa theresa terry terri victor victoria vincent walter wendy will william willow zoe
zoey zack zach zachary xavier yusuf yuri vera vivian wayne dwayne duane frank frances francis
fred freddie gina gene ina irene iris ivy jade jody jodie judy judith kara cara kirk
""".split()
